//! Epoch loops for both stages.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chipstore::NormalizedChip;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::aprc_of;
use crate::nets::{batch_images, stack_pair, AnyParams, ArchConfig, Embedding, Stage1Params, Stage2Params};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::adam::{adam_step, AdamState};
use super::checkpoint::Checkpoint;
use super::hyper::{early_stop_check, Hyperparams};
use super::losses::{bce_with_logits_grad, dice_loss_logits, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
}

/// Per-run training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub stage: u8,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Kept checkpoints, best first, plus the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun<T: Scalar> {
    pub checkpoints: Vec<Checkpoint<T>>,
    pub log: TrainLog,
}

/// Best `k` checkpoints by metric; on ties the earlier epoch ranks first.
struct TopK<T: Scalar> {
    k: usize,
    items: Vec<Checkpoint<T>>,
}

impl<T: Scalar> TopK<T> {
    fn qualifies(&self, metric: f64) -> bool {
        self.items.len() < self.k || self.items.last().is_some_and(|c| metric > c.val_metric)
    }

    fn insert(&mut self, cp: Checkpoint<T>) {
        let pos = self.items.iter().position(|c| c.val_metric < cp.val_metric).unwrap_or(self.items.len());
        self.items.insert(pos, cp);
        self.items.truncate(self.k);
    }
}

/// Visiting order of the training chips in `epoch`; a pure function of the seed.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn check_sets(train: &[NormalizedChip], val: &[NormalizedChip]) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Precondition(format!(
            "training needs chips in both sets ({} train, {} validation)",
            train.len(),
            val.len()
        )));
    }
    let ids: HashSet<&str> = train.iter().map(|c| c.chip_id.as_str()).collect();
    if let Some(c) = val.iter().find(|c| ids.contains(c.chip_id.as_str())) {
        return Err(Error::Precondition(format!("chip {} is in both training and validation sets", c.chip_id)));
    }
    Ok(())
}

fn label<T: Scalar>(flag: bool) -> T {
    if flag {
        T::one()
    } else {
        T::zero()
    }
}

fn finite_loss(loss: f64, epoch: usize, batch: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Divergence(format!("loss {loss} at epoch {epoch}, batch {batch}")))
    }
}

/// One optimisation step of the Siamese classifier; returns the batch loss.
pub(crate) fn stage1_step<T: Scalar>(
    p: &mut Stage1Params<T>,
    adam: &mut AdamState<T>,
    hyper: &Hyperparams,
    batch: &[&NormalizedChip],
) -> Result<f64> {
    let (pre, post) = batch_images::<T>(batch)?;
    let labels: Vec<T> = batch.iter().map(|c| label(c.has_landslide)).collect();
    let (loss, grads) = {
        let mut g = Graph::new();
        let ev = p.encoder.bind(&mut g, true);
        let hv = p.head.bind(&mut g, true);
        let a = g.constant(pre);
        let b = g.constant(post);
        let ea = p.embed_graph(&mut g, &ev, a)?;
        let eb = p.embed_graph(&mut g, &ev, b)?;
        let out = p.head_graph(&mut g, &hv, ea, eb)?;
        let (loss, dl) = bce_with_logits_grad(g.value(out).data(), &labels)?;
        let mut grads = g.backward(out, Tensor::from_vec(&[batch.len(), 1], dl)?)?;
        let leaves = p.encoder.tensors().iter().chain(p.head.tensors());
        let all: Vec<Tensor<T>> =
            ev.iter().chain(&hv).zip(leaves).map(|(&v, t)| grads.take_or_zeros(v, t.shape())).collect();
        (loss, all)
    };
    let params = p.encoder.tensors_mut().iter_mut().chain(p.head.tensors_mut().iter_mut());
    adam_step(params, &grads, adam, hyper)?;
    Ok(loss.as_f64())
}

/// Mean BCE and accuracy (`sigmoid(logit) > 0.5`) of a stage-1 model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Eval {
    pub loss: f64,
    pub accuracy: f64,
}

pub fn evaluate_stage1<T: Scalar>(
    p: &Stage1Params<T>,
    chips: &[NormalizedChip],
    batch_size: usize,
) -> Result<Stage1Eval> {
    if chips.is_empty() {
        return Err(Error::Precondition("cannot evaluate on an empty set".into()));
    }
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in chips.chunks(batch_size.max(1)) {
        let refs: Vec<&NormalizedChip> = chunk.iter().collect();
        let (pre, post) = batch_images::<T>(&refs)?;
        let logits = p.forward(&pre, &post)?;
        let labels: Vec<T> = chunk.iter().map(|c| label(c.has_landslide)).collect();
        let (l, _) = bce_with_logits_grad(&logits, &labels)?;
        loss += l.as_f64() * chunk.len() as f64;
        correct += logits.iter().zip(chunk).filter(|(x, c)| (sigmoid(**x).as_f64() > 0.5) == c.has_landslide).count();
    }
    let n = chips.len() as f64;
    Ok(Stage1Eval { loss: loss / n, accuracy: correct as f64 / n })
}

/// Train the Siamese chip classifier from scratch. Returns the `top_k`
/// checkpoints by validation accuracy, best first.
pub fn train_stage1<T: Scalar>(
    pretrain: &[NormalizedChip],
    val: &[NormalizedChip],
    arch: &ArchConfig,
    hyper: &Hyperparams,
) -> Result<TrainRun<T>> {
    hyper.validate()?;
    check_sets(pretrain, val)?;
    let mut p = Stage1Params::<T>::init(arch, hyper.seed)?;
    let mut adam = AdamState::new(p.encoder.tensors().iter().chain(p.head.tensors()));
    let mut top = TopK { k: hyper.top_k_checkpoints, items: Vec::new() };
    let mut log = TrainLog { stage: 1, seed: hyper.seed, epochs: Vec::new(), stopped_early: false };
    let mut history = Vec::new();
    for epoch in 0..hyper.max_epochs {
        let order = epoch_order(pretrain.len(), hyper.seed, epoch);
        let mut total = 0.0;
        for (b, idx) in order.chunks(hyper.batch_size).enumerate() {
            let batch: Vec<&NormalizedChip> = idx.iter().map(|&i| &pretrain[i]).collect();
            let loss = finite_loss(stage1_step(&mut p, &mut adam, hyper, &batch)?, epoch, b)?;
            total += loss * batch.len() as f64;
        }
        let eval = evaluate_stage1(&p, val, hyper.batch_size)?;
        finite_loss(eval.loss, epoch, usize::MAX)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / pretrain.len() as f64,
            val_loss: eval.loss,
            val_metric: eval.accuracy,
        };
        log::debug!("stage 1 epoch {epoch}: {record:?}");
        log.epochs.push(record);
        if top.qualifies(eval.accuracy) {
            top.insert(Checkpoint {
                params: AnyParams::Stage1(p.clone()),
                epoch,
                val_metric: eval.accuracy,
                seed: hyper.seed,
                pretrained_digest: None,
            });
        }
        history.push(eval.loss);
        if early_stop_check(&history, hyper.patience_epochs) {
            log.stopped_early = true;
            break;
        }
    }
    Ok(TrainRun { checkpoints: top.items, log })
}

/// Frozen `(pre, post)` embeddings for every chip, computed in batches.
pub fn frozen_embeddings<T: Scalar>(
    stage1: &Stage1Params<T>,
    chips: &[NormalizedChip],
    batch_size: usize,
) -> Result<Vec<(Embedding<T>, Embedding<T>)>> {
    let mut out = Vec::with_capacity(chips.len());
    for chunk in chips.chunks(batch_size.max(1)) {
        let refs: Vec<&NormalizedChip> = chunk.iter().collect();
        let (pre, post) = batch_images::<T>(&refs)?;
        let ea = stage1.embed(&pre)?;
        let eb = stage1.embed(&post)?;
        out.extend((0..chunk.len()).map(|i| (ea.index0(i), eb.index0(i))));
    }
    Ok(out)
}

fn stack_frozen<T: Scalar>(frozen: &[&(Embedding<T>, Embedding<T>)]) -> Result<(Tensor<T>, Tensor<T>)> {
    let a: Vec<&Tensor<T>> = frozen.iter().map(|f| &f.0).collect();
    let b: Vec<&Tensor<T>> = frozen.iter().map(|f| &f.1).collect();
    Ok((Tensor::stack(&a)?, Tensor::stack(&b)?))
}

fn stage2_inputs<T: Scalar>(batch: &[&NormalizedChip]) -> Result<Tensor<T>> {
    let (pre, post) = batch_images::<T>(batch)?;
    stack_pair(&pre, &post)
}

/// One optimisation step of the segmentation network on the per-chip mean
/// dice loss; returns the batch loss.
pub(crate) fn stage2_step<T: Scalar>(
    p: &mut Stage2Params<T>,
    adam: &mut AdamState<T>,
    hyper: &Hyperparams,
    batch: &[&NormalizedChip],
    frozen: Option<&[&(Embedding<T>, Embedding<T>)]>,
) -> Result<f64> {
    p.check_frozen(frozen.is_some())?;
    let x = stage2_inputs::<T>(batch)?;
    let s = p.arch().chip_size;
    let n = batch.len();
    let smoothing = T::of(hyper.dice_smoothing);
    let (loss, grads) = {
        let mut g = Graph::new();
        let v = p.params.bind(&mut g, true);
        let xv = g.constant(x);
        let fv = match frozen {
            Some(f) => {
                let (a, b) = stack_frozen(f)?;
                Some((g.constant(a), g.constant(b)))
            }
            None => None,
        };
        let out = p.graph(&mut g, &v, xv, fv)?;
        let logits = g.value(out).data();
        let scale = T::of(1.0 / n as f64);
        let mut seed = Vec::with_capacity(n * s * s);
        let mut loss = 0.0;
        for (chip, block) in batch.iter().zip(logits.chunks(s * s)) {
            let target: Vec<T> = chip.mask.iter().map(|&m| label(m == 1)).collect();
            let (l, grad) = dice_loss_logits(block, &target, smoothing)?;
            loss += l.as_f64();
            seed.extend(grad.into_iter().map(|d| d * scale));
        }
        let mut grads = g.backward(out, Tensor::from_vec(&[n, 1, s, s], seed)?)?;
        let all: Vec<Tensor<T>> =
            v.iter().zip(p.params.tensors()).map(|(&var, t)| grads.take_or_zeros(var, t.shape())).collect();
        (loss / n as f64, all)
    };
    adam_step(p.params.tensors_mut().iter_mut(), &grads, adam, hyper)?;
    Ok(loss)
}

/// Per-pixel probabilities of a stage-2 model, one `S * S` vector per chip.
pub fn predict_stage2<T: Scalar>(
    p: &Stage2Params<T>,
    chips: &[NormalizedChip],
    frozen: Option<&[(Embedding<T>, Embedding<T>)]>,
    batch_size: usize,
) -> Result<Vec<Vec<T>>> {
    p.check_frozen(frozen.is_some())?;
    if let Some(f) = frozen {
        if f.len() != chips.len() {
            return Err(Error::Shape(format!("{} embeddings for {} chips", f.len(), chips.len())));
        }
    }
    let s = p.arch().chip_size;
    let mut out = Vec::with_capacity(chips.len());
    for (k, chunk) in chips.chunks(batch_size.max(1)).enumerate() {
        let refs: Vec<&NormalizedChip> = chunk.iter().collect();
        let (pre, post) = batch_images::<T>(&refs)?;
        let logits = match frozen {
            Some(f) => {
                let start = k * batch_size.max(1);
                let part: Vec<&(Embedding<T>, Embedding<T>)> = f[start..start + chunk.len()].iter().collect();
                let (a, b) = stack_frozen(&part)?;
                p.forward(&pre, &post, Some((&a, &b)))?
            }
            None => p.forward(&pre, &post, None)?,
        };
        out.extend(logits.data().chunks(s * s).map(|c| c.iter().map(|&x| sigmoid(x)).collect()));
    }
    Ok(out)
}

/// Mean per-chip dice loss and pooled pixel APRC of a stage-2 model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Eval {
    pub loss: f64,
    pub aprc: f64,
}

pub fn evaluate_stage2<T: Scalar>(
    p: &Stage2Params<T>,
    chips: &[NormalizedChip],
    frozen: Option<&[(Embedding<T>, Embedding<T>)]>,
    hyper: &Hyperparams,
) -> Result<Stage2Eval> {
    if chips.is_empty() {
        return Err(Error::Precondition("cannot evaluate on an empty set".into()));
    }
    let probs = predict_stage2(p, chips, frozen, hyper.batch_size)?;
    if probs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("non-finite prediction on the validation set".into()));
    }
    let smoothing = T::of(hyper.dice_smoothing);
    let mut loss = 0.0;
    let mut scores = Vec::with_capacity(probs.len() * probs[0].len());
    let mut labels = Vec::with_capacity(scores.capacity());
    for (chip, pr) in chips.iter().zip(&probs) {
        let target: Vec<T> = chip.mask.iter().map(|&m| label(m == 1)).collect();
        loss += super::losses::dice_loss(pr, &target, smoothing)?.as_f64();
        scores.extend_from_slice(pr);
        labels.extend_from_slice(&chip.mask);
    }
    let aprc = aprc_of(&scores, &labels)?;
    Ok(Stage2Eval { loss: loss / chips.len() as f64, aprc })
}

fn check_pixel_labels(chips: &[NormalizedChip]) -> Result<()> {
    match chips.iter().find(|c| c.has_landslide != (c.positive_pixels() > 0)) {
        Some(c) => Err(Error::Data(format!("chip {} has no per-pixel mask", c.chip_id))),
        None => Ok(()),
    }
}

/// Train the segmentation network, optionally fused with the embeddings of a
/// frozen stage-1 checkpoint. Returns the `top_k` checkpoints by validation
/// APRC, best first.
pub fn train_stage2<T: Scalar>(
    seg_train: &[NormalizedChip],
    val: &[NormalizedChip],
    pretrained: Option<&Checkpoint<T>>,
    arch: &ArchConfig,
    hyper: &Hyperparams,
) -> Result<TrainRun<T>> {
    hyper.validate()?;
    check_sets(seg_train, val)?;
    check_pixel_labels(seg_train)?;
    check_pixel_labels(val)?;
    if !val.iter().any(|c| c.has_landslide) {
        return Err(Error::Precondition("validation set has no landslide pixels; APRC is undefined".into()));
    }
    let stage1 = pretrained.map(Checkpoint::stage1).transpose()?;
    if let Some(s1) = stage1 {
        if s1.arch() != arch {
            return Err(Error::Config(
                "pretrained checkpoint architecture differs from the stage-2 architecture".into(),
            ));
        }
    }
    let digest = stage1.map(|s| s.encoder.digest());
    let train_cache = stage1.map(|s| frozen_embeddings(s, seg_train, hyper.batch_size)).transpose()?;
    let val_cache = stage1.map(|s| frozen_embeddings(s, val, hyper.batch_size)).transpose()?;

    let mut p = Stage2Params::<T>::init(arch, stage1.is_some(), hyper.seed)?;
    let mut adam = AdamState::new(p.params.tensors());
    let mut top = TopK { k: hyper.top_k_checkpoints, items: Vec::new() };
    let mut log = TrainLog { stage: 2, seed: hyper.seed, epochs: Vec::new(), stopped_early: false };
    let mut history = Vec::new();
    for epoch in 0..hyper.max_epochs {
        let order = epoch_order(seg_train.len(), hyper.seed, epoch);
        let mut total = 0.0;
        for (b, idx) in order.chunks(hyper.batch_size).enumerate() {
            let batch: Vec<&NormalizedChip> = idx.iter().map(|&i| &seg_train[i]).collect();
            let frozen: Option<Vec<_>> = train_cache.as_ref().map(|c| idx.iter().map(|&i| &c[i]).collect());
            let loss = stage2_step(&mut p, &mut adam, hyper, &batch, frozen.as_deref())?;
            total += finite_loss(loss, epoch, b)? * batch.len() as f64;
        }
        let eval = evaluate_stage2(&p, val, val_cache.as_deref(), hyper)?;
        finite_loss(eval.loss, epoch, usize::MAX)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / seg_train.len() as f64,
            val_loss: eval.loss,
            val_metric: eval.aprc,
        };
        log::debug!("stage 2 epoch {epoch}: {record:?}");
        log.epochs.push(record);
        if top.qualifies(eval.aprc) {
            top.insert(Checkpoint {
                params: AnyParams::Stage2(p.clone()),
                epoch,
                val_metric: eval.aprc,
                seed: hyper.seed,
                pretrained_digest: digest.clone(),
            });
        }
        history.push(eval.loss);
        if early_stop_check(&history, hyper.patience_epochs) {
            log.stopped_early = true;
            break;
        }
    }
    if let (Some(s1), Some(d)) = (stage1, &digest) {
        if &s1.encoder.digest() != d {
            return Err(Error::Divergence("frozen stage-1 parameters changed during training".into()));
        }
    }
    Ok(TrainRun { checkpoints: top.items, log })
}
