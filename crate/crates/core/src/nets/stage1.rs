//! Siamese change classifier.
//!
//! A U-Net with a residual encoder maps each image to a full-resolution
//! embedding. The same weights process the pre- and post-event image; the two
//! embeddings are average-pooled per channel, concatenated and passed through
//! a two-layer fully connected head that emits one logit per chip.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::arch::ArchConfig;
use super::params::{ConvSpec, ParamSet};
use super::{as_batch, check_images};

#[derive(Debug, Clone, PartialEq)]
struct Block {
    conv1: ConvSpec,
    conv2: ConvSpec,
    shortcut: Option<ConvSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct UNetLayout {
    stem: ConvSpec,
    stages: Vec<Vec<Block>>,
    /// Deepest first.
    decoder: Vec<[ConvSpec; 2]>,
    project: ConvSpec,
}

impl UNetLayout {
    fn build<T: Scalar>(arch: &ArchConfig, set: &mut ParamSet<T>) -> Self {
        let widths = arch.stage_channels();
        let dec = arch.decoder_channels();
        let stem_c = widths[0];
        let stem = ConvSpec::add(set, "stem", arch.input_channels, stem_c, 3, 1);
        let mut stages = Vec::with_capacity(arch.encoder_depth);
        let mut cin = stem_c;
        for (s, (&c, &n_blocks)) in widths.iter().zip(&arch.blocks_per_stage).enumerate() {
            let mut blocks = Vec::with_capacity(n_blocks);
            for b in 0..n_blocks {
                let stride = if b == 0 { 2 } else { 1 };
                let name = format!("enc{s}.{b}");
                let conv1 = ConvSpec::add(set, &format!("{name}.conv1"), cin, c, 3, stride);
                let conv2 = ConvSpec::add(set, &format!("{name}.conv2"), c, c, 3, 1);
                let shortcut = (stride != 1 || cin != c)
                    .then(|| ConvSpec::add(set, &format!("{name}.shortcut"), cin, c, 1, stride));
                blocks.push(Block { conv1, conv2, shortcut });
                cin = c;
            }
            stages.push(blocks);
        }
        // skip feature entering decoder level i: stem output for i = 0,
        // otherwise the output of encoder stage i - 1
        let skip_c = |i: usize| if i == 0 { stem_c } else { widths[i - 1] };
        let mut decoder = Vec::with_capacity(arch.encoder_depth);
        let mut x_c = *widths.last().expect("depth >= 1");
        for i in (0..arch.encoder_depth).rev() {
            let a = ConvSpec::add(set, &format!("dec{i}.conv1"), x_c + skip_c(i), dec[i], 3, 1);
            let b = ConvSpec::add(set, &format!("dec{i}.conv2"), dec[i], dec[i], 3, 1);
            decoder.push([a, b]);
            x_c = dec[i];
        }
        let project = ConvSpec::add(set, "project", x_c, arch.embedding(), 1, 1);
        Self { stem, stages, decoder, project }
    }

    /// `x: N x 2 x S x S` -> `N x E x S x S`.
    pub(crate) fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, v: &[Var], x: Var) -> Result<Var> {
        let stem = self.stem.apply(g, v, x)?;
        let mut skips = vec![g.relu(stem)];
        let mut h = skips[0];
        for stage in &self.stages {
            for block in stage {
                let a = block.conv1.apply(g, v, h)?;
                let a = g.relu(a);
                let a = block.conv2.apply(g, v, a)?;
                let short = match &block.shortcut {
                    Some(s) => s.apply(g, v, h)?,
                    None => h,
                };
                let sum = g.add(a, short)?;
                h = g.relu(sum);
            }
            skips.push(h);
        }
        // skips[0..depth] feed the decoder, skips[depth] is the bottleneck
        let depth = self.stages.len();
        for (level, convs) in (0..depth).rev().zip(&self.decoder) {
            let up = g.upsample2(h)?;
            let cat = g.concat(&[up, skips[level]])?;
            let a = convs[0].apply(g, v, cat)?;
            let a = g.relu(a);
            let b = convs[1].apply(g, v, a)?;
            h = g.relu(b);
        }
        self.project.apply(g, v, h)
    }
}

/// Negative-side slope of the hidden head activation.
pub const HEAD_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct HeadLayout {
    fc1: (usize, usize),
    fc2: (usize, usize),
}

impl HeadLayout {
    fn build<T: Scalar>(arch: &ArchConfig, set: &mut ParamSet<T>) -> Self {
        let e = arch.embedding();
        let hidden = arch.scaled(arch.head_hidden);
        let fc1 = (
            set.push("head.fc1.weight", Tensor::zeros(&[hidden, 2 * e])),
            set.push("head.fc1.bias", Tensor::zeros(&[hidden])),
        );
        let fc2 =
            (set.push("head.fc2.weight", Tensor::zeros(&[1, hidden])), set.push("head.fc2.bias", Tensor::zeros(&[1])));
        Self { fc1, fc2 }
    }

    /// Pooled, concatenated embeddings -> `N x 1` logits.
    pub(crate) fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, v: &[Var], e_pre: Var, e_post: Var) -> Result<Var> {
        let p_pre = g.avg_pool(e_pre)?;
        let p_post = g.avg_pool(e_post)?;
        let cat = g.concat(&[p_pre, p_post])?;
        let h = g.linear(cat, v[self.fc1.0], v[self.fc1.1])?;
        let h = g.leaky_relu(h, HEAD_SLOPE);
        g.linear(h, v[self.fc2.0], v[self.fc2.1])
    }
}

/// Weights of the stage-1 network. The encoder-decoder is shared by both
/// branches; the head is only used while pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Params<T: Scalar> {
    arch: ArchConfig,
    pub encoder: ParamSet<T>,
    pub head: ParamSet<T>,
    unet: UNetLayout,
    head_layout: HeadLayout,
}

impl<T: Scalar> Stage1Params<T> {
    /// Zero-valued parameters with the layout implied by `arch`.
    pub fn zeros(arch: &ArchConfig) -> Result<Self> {
        arch.validate()?;
        let mut encoder = ParamSet::new();
        let unet = UNetLayout::build(arch, &mut encoder);
        let mut head = ParamSet::new();
        let head_layout = HeadLayout::build(arch, &mut head);
        Ok(Self { arch: arch.clone(), encoder, head, unet, head_layout })
    }

    /// Fan-in scaled uniform initialisation, deterministic in `seed`.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        p.encoder.init_uniform(seed);
        // residual branches start as identities
        for block in p.unet.stages.iter().flatten() {
            p.encoder.tensors_mut()[block.conv2.weight].data_mut().fill(T::zero());
        }
        p.head.init_uniform(seed.wrapping_add(0x9e37_79b9));
        // a zero output layer starts every chip at p = 0.5
        let fc2 = p.head_layout.fc2.0;
        p.head.tensors_mut()[fc2].data_mut().fill(T::zero());
        Ok(p)
    }

    /// Rebuild from stored tensors, checking names and shapes against `arch`.
    pub fn from_sets(arch: &ArchConfig, encoder: ParamSet<T>, head: ParamSet<T>) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        super::check_same_layout(&p.encoder, &encoder, "encoder")?;
        super::check_same_layout(&p.head, &head, "head")?;
        p.encoder = encoder;
        p.head = head;
        Ok(p)
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn count_params(&self) -> usize {
        self.encoder.count() + self.head.count()
    }

    pub(crate) fn embed_graph(&self, g: &mut Graph<'_, T>, enc: &[Var], x: Var) -> Result<Var> {
        self.unet.forward(g, enc, x)
    }

    pub(crate) fn head_graph(&self, g: &mut Graph<'_, T>, head: &[Var], e_pre: Var, e_post: Var) -> Result<Var> {
        self.head_layout.forward(g, head, e_pre, e_post)
    }

    /// Embedding of one image (`2 x S x S` -> `E x S x S`) or a batch
    /// (`N x 2 x S x S` -> `N x E x S x S`).
    pub fn embed(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let (x, single) = as_batch(image)?;
        check_images(&x, self.arch.input_channels, self.arch.chip_size)?;
        let mut g = Graph::new();
        let v = self.encoder.bind(&mut g, false);
        let xv = g.constant(x);
        let e = self.embed_graph(&mut g, &v, xv)?;
        let out = g.value(e).clone();
        if single {
            let s = out.shape()[1..].to_vec();
            out.reshape(&s)
        } else {
            Ok(out)
        }
    }

    /// Head logits from precomputed embeddings (single or batched).
    pub fn head_logits(&self, e_pre: &Tensor<T>, e_post: &Tensor<T>) -> Result<Vec<T>> {
        let (a, _) = as_batch(e_pre)?;
        let (b, _) = as_batch(e_post)?;
        if a.shape() != b.shape() || a.shape()[1] != self.arch.embedding() {
            return Err(Error::Shape(format!("embeddings {:?} and {:?}", a.shape(), b.shape())));
        }
        let mut g = Graph::new();
        let v = self.head.bind(&mut g, false);
        let av = g.constant(a);
        let bv = g.constant(b);
        let out = self.head_graph(&mut g, &v, av, bv)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Chip logits for image pairs (single or batched).
    pub fn forward(&self, pre: &Tensor<T>, post: &Tensor<T>) -> Result<Vec<T>> {
        let (a, _) = as_batch(pre)?;
        let (b, _) = as_batch(post)?;
        if a.shape() != b.shape() {
            return Err(Error::Shape(format!("pre {:?} vs post {:?}", a.shape(), b.shape())));
        }
        check_images(&a, self.arch.input_channels, self.arch.chip_size)?;
        check_images(&b, self.arch.input_channels, self.arch.chip_size)?;
        let mut g = Graph::new();
        let ev = self.encoder.bind(&mut g, false);
        let hv = self.head.bind(&mut g, false);
        let av = g.constant(a);
        let bv = g.constant(b);
        let ea = self.embed_graph(&mut g, &ev, av)?;
        let eb = self.embed_graph(&mut g, &ev, bv)?;
        let out = self.head_graph(&mut g, &hv, ea, eb)?;
        Ok(g.value(out).data().to_vec())
    }

    pub fn cast<U: Scalar>(&self) -> Stage1Params<U> {
        Stage1Params {
            arch: self.arch.clone(),
            encoder: self.encoder.cast(),
            head: self.head.cast(),
            unet: self.unet.clone(),
            head_layout: self.head_layout.clone(),
        }
    }
}
