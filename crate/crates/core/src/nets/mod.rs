//! Both network stages as forward functions over explicit parameter containers.

mod arch;
mod params;
mod stage1;
mod stage2;

pub use arch::ArchConfig;
pub use params::{ConvSpec, ParamSet};
pub use stage1::{Stage1Params, HEAD_SLOPE};
pub(crate) use stage2::stack_pair;
pub use stage2::Stage2Params;

use crate::chipstore::NormalizedChip;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stage-1 output for one image: `E x S x S`.
pub type Embedding<T> = Tensor<T>;

/// Anything that owns trainable scalars.
pub trait CountParams {
    fn count_params(&self) -> usize;
}

impl<T: Scalar> CountParams for ParamSet<T> {
    fn count_params(&self) -> usize {
        self.count()
    }
}

impl<T: Scalar> CountParams for Stage1Params<T> {
    fn count_params(&self) -> usize {
        Stage1Params::count_params(self)
    }
}

impl<T: Scalar> CountParams for Stage2Params<T> {
    fn count_params(&self) -> usize {
        Stage2Params::count_params(self)
    }
}

pub fn count_params(p: &impl CountParams) -> usize {
    p.count_params()
}

/// Stage selector for [`init_params`].
#[derive(Debug, Clone, PartialEq)]
pub enum AnyParams<T: Scalar> {
    Stage1(Stage1Params<T>),
    Stage2(Stage2Params<T>),
}

/// Initialise stage 1 (`stage = 1`) or a pretrained-fusion stage 2 (`stage = 2`).
pub fn init_params<T: Scalar>(arch: &ArchConfig, stage: u8, seed: u64) -> Result<AnyParams<T>> {
    match stage {
        1 => Stage1Params::init(arch, seed).map(AnyParams::Stage1),
        2 => Stage2Params::init(arch, true, seed).map(AnyParams::Stage2),
        s => Err(Error::Config(format!("unknown stage {s}"))),
    }
}

pub(crate) fn as_batch<T: Scalar>(t: &Tensor<T>) -> Result<(Tensor<T>, bool)> {
    match t.shape().len() {
        3 => {
            let mut s = vec![1];
            s.extend_from_slice(t.shape());
            Ok((t.clone().reshape(&s)?, true))
        }
        4 => Ok((t.clone(), false)),
        _ => Err(Error::Shape(format!("expected C x S x S or N x C x S x S, got {:?}", t.shape()))),
    }
}

pub(crate) fn check_images<T: Scalar>(x: &Tensor<T>, channels: usize, size: usize) -> Result<()> {
    let s = x.shape();
    if s[1] != channels || s[2] != size || s[3] != size {
        return Err(Error::Shape(format!("images {:?}, expected N x {channels} x {size} x {size}", s)));
    }
    if !x.all_finite() {
        return Err(Error::Data("non-finite value in network input".into()));
    }
    Ok(())
}

pub(crate) fn check_same_layout<T: Scalar>(expected: &ParamSet<T>, got: &ParamSet<T>, what: &str) -> Result<()> {
    if expected.names() != got.names() {
        return Err(Error::format(what, "parameter names do not match the architecture"));
    }
    for ((name, a), b) in expected.names().iter().zip(expected.tensors()).zip(got.tensors()) {
        if a.shape() != b.shape() {
            return Err(Error::format(what, format!("{name}: shape {:?}, expected {:?}", b.shape(), a.shape())));
        }
    }
    Ok(())
}

/// Network input tensors `(pre, post)` of shape `N x 2 x S x S` for a batch of chips.
pub fn batch_images<T: Scalar>(chips: &[&NormalizedChip]) -> Result<(Tensor<T>, Tensor<T>)> {
    let first = chips.first().ok_or_else(|| Error::Precondition("empty batch".into()))?;
    let s = first.size;
    let mut pre = Vec::with_capacity(chips.len() * first.pre.len());
    let mut post = Vec::with_capacity(chips.len() * first.post.len());
    for c in chips {
        if c.size != s {
            return Err(Error::Shape(format!("mixed chip sizes {} and {}", c.size, s)));
        }
        pre.extend(c.pre.iter().map(|&v| T::of(f64::from(v))));
        post.extend(c.post.iter().map(|&v| T::of(f64::from(v))));
    }
    let ch = first.pre.len() / (s * s);
    Ok((Tensor::from_vec(&[chips.len(), ch, s, s], pre)?, Tensor::from_vec(&[chips.len(), ch, s, s], post)?))
}

/// Frozen stage-1 embeddings of a chip's pre and post images.
pub fn chip_embeddings<T: Scalar>(
    stage1: &Stage1Params<T>,
    chip: &NormalizedChip,
) -> Result<(Embedding<T>, Embedding<T>)> {
    let (pre, post) = batch_images::<T>(&[chip])?;
    let both = Tensor::stack(&[&pre.index0(0), &post.index0(0)])?;
    let e = stage1.embed(&both)?;
    Ok((e.index0(0), e.index0(1)))
}

#[cfg(test)]
mod tests;
