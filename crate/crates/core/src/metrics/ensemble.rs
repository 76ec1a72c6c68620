//! Averaging probabilities over checkpoints.

use crate::chipstore::NormalizedChip;
use crate::error::{Error, Result};
use crate::nets::{Embedding, Stage1Params};
use crate::scalar::Scalar;
use crate::trainer::{frozen_embeddings, predict_stage2, Checkpoint};

/// Source of frozen stage-1 embeddings for fused models.
pub trait EmbeddingProvider<T: Scalar> {
    fn embeddings(&self, chips: &[NormalizedChip]) -> Result<Vec<(Embedding<T>, Embedding<T>)>>;
}

impl<T: Scalar> EmbeddingProvider<T> for Stage1Params<T> {
    fn embeddings(&self, chips: &[NormalizedChip]) -> Result<Vec<(Embedding<T>, Embedding<T>)>> {
        frozen_embeddings(self, chips, 16)
    }
}

/// Probabilities of every member checkpoint: `[member][chip][pixel]`.
pub fn member_predictions<T: Scalar>(
    checkpoints: &[Checkpoint<T>],
    chips: &[NormalizedChip],
    provider: Option<&dyn EmbeddingProvider<T>>,
    batch_size: usize,
) -> Result<Vec<Vec<Vec<T>>>> {
    let first =
        checkpoints.first().ok_or_else(|| Error::Precondition("ensemble needs at least one checkpoint".into()))?;
    let fused = first.uses_pretrained();
    for cp in checkpoints {
        cp.stage2()?;
        if cp.uses_pretrained() != fused {
            return Err(Error::Precondition("ensemble mixes pretrained and baseline checkpoints".into()));
        }
        if cp.arch() != first.arch() {
            return Err(Error::Precondition("ensemble mixes architectures".into()));
        }
    }
    let frozen = if fused {
        let provider =
            provider.ok_or_else(|| Error::Precondition("fused checkpoints need an embedding provider".into()))?;
        Some(provider.embeddings(chips)?)
    } else {
        None
    };
    checkpoints.iter().map(|cp| predict_stage2(cp.stage2()?, chips, frozen.as_deref(), batch_size)).collect()
}

/// Arithmetic mean over members, per chip and pixel, accumulated in `f64`.
pub fn ensemble_mean<T: Scalar>(members: &[Vec<Vec<T>>]) -> Result<Vec<Vec<f64>>> {
    let first = members.first().ok_or_else(|| Error::Precondition("ensemble needs at least one member".into()))?;
    let mut acc: Vec<Vec<f64>> = first.iter().map(|c| vec![0.0; c.len()]).collect();
    for m in members {
        if m.len() != acc.len() || m.iter().zip(&acc).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Shape("ensemble members disagree in shape".into()));
        }
        for (sum, chip) in acc.iter_mut().zip(m) {
            for (s, p) in sum.iter_mut().zip(chip) {
                *s += p.as_f64();
            }
        }
    }
    let n = members.len() as f64;
    for chip in &mut acc {
        for v in chip.iter_mut() {
            *v /= n;
        }
    }
    Ok(acc)
}

/// Mean sigmoid probability of the checkpoints for each chip.
pub fn ensemble_predict<T: Scalar>(
    checkpoints: &[Checkpoint<T>],
    chips: &[NormalizedChip],
    provider: Option<&dyn EmbeddingProvider<T>>,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    ensemble_mean(&member_predictions(checkpoints, chips, provider, batch_size)?)
}
