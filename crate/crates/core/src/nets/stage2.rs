//! Segmentation network: a three-layer CNN over the stacked pre/post images,
//! optionally fused with frozen stage-1 embeddings, followed by a two-layer
//! convolutional head producing one logit per pixel.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::arch::ArchConfig;
use super::params::{ConvSpec, ParamSet};
use super::{as_batch, check_images};

#[derive(Debug, Clone, PartialEq)]
struct SegLayout {
    features: [ConvSpec; 3],
    fuse: ConvSpec,
    out: ConvSpec,
}

impl SegLayout {
    fn build<T: Scalar>(arch: &ArchConfig, uses_pretrained: bool, set: &mut ParamSet<T>) -> Self {
        let h = arch.scaled(arch.seg_channels);
        let f = arch.scaled(arch.fusion_channels);
        let cin = 2 * arch.input_channels;
        let features = [
            ConvSpec::add(set, "features.0", cin, h, 3, 1),
            ConvSpec::add(set, "features.1", h, h, 3, 1),
            ConvSpec::add(set, "features.2", h, h, 3, 1),
        ];
        let fused_in = if uses_pretrained { h + 2 * arch.embedding() } else { h };
        let fuse = ConvSpec::add(set, "fusion.0", fused_in, f, 3, 1);
        let out = ConvSpec::add(set, "fusion.1", f, 1, 1, 1);
        Self { features, fuse, out }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Params<T: Scalar> {
    arch: ArchConfig,
    uses_pretrained: bool,
    pub params: ParamSet<T>,
    layout: SegLayout,
}

impl<T: Scalar> Stage2Params<T> {
    pub fn zeros(arch: &ArchConfig, uses_pretrained: bool) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamSet::new();
        let layout = SegLayout::build(arch, uses_pretrained, &mut params);
        Ok(Self { arch: arch.clone(), uses_pretrained, params, layout })
    }

    pub fn init(arch: &ArchConfig, uses_pretrained: bool, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch, uses_pretrained)?;
        p.params.init_uniform(seed);
        Ok(p)
    }

    pub fn from_set(arch: &ArchConfig, uses_pretrained: bool, params: ParamSet<T>) -> Result<Self> {
        let mut p = Self::zeros(arch, uses_pretrained)?;
        super::check_same_layout(&p.params, &params, "stage-2")?;
        p.params = params;
        Ok(p)
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn uses_pretrained(&self) -> bool {
        self.uses_pretrained
    }

    pub fn count_params(&self) -> usize {
        self.params.count()
    }

    /// `images: N x 4 x S x S` (pre channels then post channels) -> `N x 1 x S x S`.
    pub(crate) fn graph(
        &self,
        g: &mut Graph<'_, T>,
        v: &[Var],
        images: Var,
        frozen: Option<(Var, Var)>,
    ) -> Result<Var> {
        let mut h = images;
        for conv in &self.layout.features {
            let c = conv.apply(g, v, h)?;
            h = g.relu(c);
        }
        let fused = match frozen {
            Some((a, b)) => g.concat(&[h, a, b])?,
            None => h,
        };
        let f = self.layout.fuse.apply(g, v, fused)?;
        let f = g.relu(f);
        self.layout.out.apply(g, v, f)
    }

    pub(crate) fn check_frozen(&self, frozen_present: bool) -> Result<()> {
        match (self.uses_pretrained, frozen_present) {
            (true, false) => Err(Error::Precondition("model uses pretrained embeddings but none were supplied".into())),
            (false, true) => Err(Error::Precondition("baseline model received pretrained embeddings".into())),
            _ => Ok(()),
        }
    }

    /// Per-pixel logits for one pair (`S x S`) or a batch (`N x S x S`).
    pub fn forward(
        &self,
        pre: &Tensor<T>,
        post: &Tensor<T>,
        frozen: Option<(&Tensor<T>, &Tensor<T>)>,
    ) -> Result<Tensor<T>> {
        self.check_frozen(frozen.is_some())?;
        let (a, single) = as_batch(pre)?;
        let (b, _) = as_batch(post)?;
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!("pre {:?} vs post {:?}", a.shape(), b.shape())));
        }
        check_images(&a, self.arch.input_channels, self.arch.chip_size)?;
        check_images(&b, self.arch.input_channels, self.arch.chip_size)?;
        let n = a.shape()[0];
        let s = self.arch.chip_size;
        let e = self.arch.embedding();
        let mut g = Graph::new();
        let v = self.params.bind(&mut g, false);
        let x = g.constant(stack_pair(&a, &b)?);
        let fv = match frozen {
            Some((ea, eb)) => {
                let (ea, _) = as_batch(ea)?;
                let (eb, _) = as_batch(eb)?;
                for t in [&ea, &eb] {
                    if t.shape() != [n, e, s, s] {
                        return Err(Error::Shape(format!(
                            "frozen embedding {:?}, expected {:?}",
                            t.shape(),
                            [n, e, s, s]
                        )));
                    }
                }
                Some((g.constant(ea), g.constant(eb)))
            }
            None => None,
        };
        let out = self.graph(&mut g, &v, x, fv)?;
        let logits = g.value(out).clone();
        if single {
            logits.reshape(&[s, s])
        } else {
            logits.reshape(&[n, s, s])
        }
    }
}

/// Concatenate `N x C x S x S` pre and post batches along channels.
pub(crate) fn stack_pair<T: Scalar>(pre: &Tensor<T>, post: &Tensor<T>) -> Result<Tensor<T>> {
    let sh = pre.shape();
    let (n, c, inner) = (sh[0], sh[1], sh[2] * sh[3]);
    let mut data = Vec::with_capacity(2 * pre.len());
    for i in 0..n {
        data.extend_from_slice(&pre.data()[i * c * inner..(i + 1) * c * inner]);
        data.extend_from_slice(&post.data()[i * c * inner..(i + 1) * c * inner]);
    }
    Tensor::from_vec(&[n, 2 * c, sh[2], sh[3]], data)
}
