//! Checkpoint files: `<name>.bin` holds the little-endian parameter payload,
//! `<name>.json` the metadata and tensor table.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chipstore::write_new;
use crate::error::{Error, Result};
use crate::nets::{AnyParams, ArchConfig, ParamSet, Stage1Params, Stage2Params};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained parameter snapshot plus the metric it was selected by.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub params: AnyParams<T>,
    pub epoch: usize,
    /// Stage 1: validation accuracy; stage 2: validation APRC.
    pub val_metric: f64,
    pub seed: u64,
    /// Digest of the frozen stage-1 encoder a stage-2 model was trained on.
    pub pretrained_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    format_version: u32,
    stage: u8,
    epoch: usize,
    val_metric: f64,
    seed: u64,
    uses_pretrained: bool,
    #[serde(default)]
    pretrained_digest: Option<String>,
    dtype: String,
    arch: ArchConfig,
    tensors: Vec<TensorEntry>,
    payload_sha256: String,
}

/// Sidecar metadata path of a checkpoint payload.
pub fn metadata_path(bin_path: &Path) -> PathBuf {
    bin_path.with_extension("json")
}

impl<T: Scalar> Checkpoint<T> {
    pub fn stage(&self) -> u8 {
        match self.params {
            AnyParams::Stage1(_) => 1,
            AnyParams::Stage2(_) => 2,
        }
    }

    pub fn uses_pretrained(&self) -> bool {
        matches!(&self.params, AnyParams::Stage2(p) if p.uses_pretrained())
    }

    pub fn arch(&self) -> &ArchConfig {
        match &self.params {
            AnyParams::Stage1(p) => p.arch(),
            AnyParams::Stage2(p) => p.arch(),
        }
    }

    pub fn stage1(&self) -> Result<&Stage1Params<T>> {
        match &self.params {
            AnyParams::Stage1(p) => Ok(p),
            AnyParams::Stage2(_) => Err(Error::Precondition("expected a stage-1 checkpoint, got stage 2".into())),
        }
    }

    pub fn stage2(&self) -> Result<&Stage2Params<T>> {
        match &self.params {
            AnyParams::Stage2(p) => Ok(p),
            AnyParams::Stage1(_) => Err(Error::Precondition("expected a stage-2 checkpoint, got stage 1".into())),
        }
    }

    fn groups(&self) -> Vec<(&'static str, &ParamSet<T>)> {
        match &self.params {
            AnyParams::Stage1(p) => vec![("encoder", &p.encoder), ("head", &p.head)],
            AnyParams::Stage2(p) => vec![("segmentation", &p.params)],
        }
    }

    /// Write `path` (payload) and its `.json` sidecar. Existing files are
    /// never overwritten.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        for (group, set) in self.groups() {
            for (name, t) in set.names().iter().zip(set.tensors()) {
                tensors.push(TensorEntry { group: group.into(), name: name.clone(), shape: t.shape().to_vec() });
                for &v in t.data() {
                    v.write_le(&mut payload);
                }
            }
        }
        let meta = CheckpointMeta {
            format_version: CHECKPOINT_VERSION,
            stage: self.stage(),
            epoch: self.epoch,
            val_metric: self.val_metric,
            seed: self.seed,
            uses_pretrained: self.uses_pretrained(),
            pretrained_digest: self.pretrained_digest.clone(),
            dtype: T::DTYPE.into(),
            arch: self.arch().clone(),
            tensors,
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        write_new(path, &payload)?;
        write_new(&metadata_path(path), &serde_json::to_vec_pretty(&meta)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = metadata_path(path);
        let meta_bytes = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)?;
        if meta.format_version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "format_version",
                format!("checkpoint version {}, expected {CHECKPOINT_VERSION}", meta.format_version),
            ));
        }
        let payload = fs::read(path).map_err(|e| Error::io(path, e))?;
        if hex::encode(Sha256::digest(&payload)) != meta.payload_sha256 {
            return Err(Error::format("payload", "checksum mismatch (corrupt payload)"));
        }
        let params = match meta.dtype.as_str() {
            "float32-le" => decode::<f32>(&meta, &payload)?.cast::<T>(),
            "float64-le" => decode::<f64>(&meta, &payload)?.cast::<T>(),
            other => return Err(Error::format("dtype", format!("unsupported dtype {other:?}"))),
        };
        let params = assemble(&meta, params)?;
        let cp = Self {
            params,
            epoch: meta.epoch,
            val_metric: meta.val_metric,
            seed: meta.seed,
            pretrained_digest: meta.pretrained_digest,
        };
        if cp.uses_pretrained() != meta.uses_pretrained {
            return Err(Error::format("uses_pretrained", "flag disagrees with the tensor layout"));
        }
        Ok(cp)
    }

    /// Load and require a particular stage.
    pub fn load_stage(path: &Path, stage: u8) -> Result<Self> {
        let cp = Self::load(path)?;
        if cp.stage() != stage {
            return Err(Error::Precondition(format!(
                "{} holds a stage-{} checkpoint, expected stage {stage}",
                path.display(),
                cp.stage()
            )));
        }
        Ok(cp)
    }
}

/// Tensors of every group, in file order.
struct Decoded<U> {
    groups: Vec<(String, Vec<String>, Vec<Tensor<U>>)>,
}

impl<U: Scalar> Decoded<U> {
    fn cast<T: Scalar>(self) -> Decoded<T> {
        Decoded {
            groups: self
                .groups
                .into_iter()
                .map(|(g, names, ts)| (g, names, ts.iter().map(Tensor::cast).collect()))
                .collect(),
        }
    }
}

fn decode<U: Scalar>(meta: &CheckpointMeta, payload: &[u8]) -> Result<Decoded<U>> {
    let expected: usize = meta.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum::<usize>() * U::BYTES;
    if payload.len() != expected {
        return Err(Error::format("payload", format!("{} bytes, expected {expected}", payload.len())));
    }
    let mut groups: Vec<(String, Vec<String>, Vec<Tensor<U>>)> = Vec::new();
    let mut offset = 0;
    for entry in &meta.tensors {
        let n: usize = entry.shape.iter().product();
        let data = payload[offset..offset + n * U::BYTES].chunks_exact(U::BYTES).map(U::read_le).collect();
        offset += n * U::BYTES;
        let t = Tensor::from_vec(&entry.shape, data)?;
        match groups.last_mut() {
            Some(g) if g.0 == entry.group => {
                g.1.push(entry.name.clone());
                g.2.push(t);
            }
            _ => groups.push((entry.group.clone(), vec![entry.name.clone()], vec![t])),
        }
    }
    Ok(Decoded { groups })
}

fn assemble<T: Scalar>(meta: &CheckpointMeta, d: Decoded<T>) -> Result<AnyParams<T>> {
    let mut sets = d.groups.into_iter().map(|(g, names, ts)| (g, ParamSet::from_parts(names, ts)));
    let mut take = |want: &str| -> Result<ParamSet<T>> {
        match sets.next() {
            Some((g, set)) if g == want => Ok(set),
            Some((g, _)) => Err(Error::format("tensors", format!("unexpected group {g:?}, expected {want:?}"))),
            None => Err(Error::format("tensors", format!("missing group {want:?}"))),
        }
    };
    let out = match meta.stage {
        1 => {
            let encoder = take("encoder")?;
            let head = take("head")?;
            AnyParams::Stage1(Stage1Params::from_sets(&meta.arch, encoder, head)?)
        }
        2 => AnyParams::Stage2(Stage2Params::from_set(&meta.arch, meta.uses_pretrained, take("segmentation")?)?),
        s => return Err(Error::format("stage", format!("unknown stage {s}"))),
    };
    if sets.next().is_some() {
        return Err(Error::format("tensors", "trailing tensor group"));
    }
    Ok(out)
}
