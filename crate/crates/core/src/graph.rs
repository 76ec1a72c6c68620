//! A small reverse-mode tape over [`Tensor`]s.
//!
//! Forward calls append nodes; [`Graph::backward`] walks them in reverse.
//! Parameters enter as borrowed leaves, so binding a model to a graph never
//! copies weights. Using the same leaf twice (weight sharing) accumulates
//! gradients from both uses.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom },
    Relu(Var),
    LeakyRelu(Var, f64),
    Add(Var, Var),
    Upsample2(Var),
    Concat(Vec<Var>),
    AvgPool(Var),
    Linear { x: Var, w: Var, b: Var },
}

struct Node<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Cow<'p, Tensor<T>>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf borrowed from a parameter container.
    pub fn param(&mut self, t: &'p Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// A borrowed leaf that never receives a gradient (frozen weights).
    pub fn frozen(&mut self, t: &'p Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    /// An owned leaf that receives a gradient (inputs under test).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let out = conv_forward(self.value(x), self.value(w), self.value(b), geom)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Cow::Owned(out), Op::Conv { x, w, b, geom }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(x);
        self.push(Cow::Owned(out), Op::Relu(x), rg)
    }

    /// `max(v, slope * v)` for `0 < slope < 1`.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let k = T::of(slope);
        let out = self.value(x).map(|v| if v > T::zero() { v } else { k * v });
        let rg = self.rg(x);
        self.push(Cow::Owned(out), Op::LeakyRelu(x, slope), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!("add {:?} + {:?}", ta.shape(), tb.shape())));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(out), Op::Add(a, b), rg))
    }

    /// Nearest-neighbour 2x upsampling of an `N x C x H x W` tensor.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let [n, c, h, w] = dims4(t)?;
        let src = t.data();
        let mut out = vec![T::zero(); n * c * h * w * 4];
        let w2 = 2 * w;
        for plane in 0..n * c {
            let s = &src[plane * h * w..(plane + 1) * h * w];
            let d = &mut out[plane * h * w * 4..(plane + 1) * h * w * 4];
            for y in 0..h {
                let row = &s[y * w..(y + 1) * w];
                let (top, bottom) = d[2 * y * w2..(2 * y + 2) * w2].split_at_mut(w2);
                for (x, &v) in row.iter().enumerate() {
                    top[2 * x] = v;
                    top[2 * x + 1] = v;
                }
                bottom.copy_from_slice(top);
            }
        }
        let out = Tensor::from_vec(&[n, c, 2 * h, 2 * w], out)?;
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), Op::Upsample2(x), rg))
    }

    /// Concatenate along axis 1 (channels for images, features for vectors).
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]);
        let n = first.shape()[0];
        let rest = &first.shape()[2..];
        let mut channels = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s[0] != n || &s[2..] != rest {
                return Err(Error::Shape(format!("concat {:?} with {:?}", first.shape(), s)));
            }
            channels += s[1];
        }
        let inner: usize = rest.iter().product();
        let mut out = Vec::with_capacity(n * channels * inner);
        for b in 0..n {
            for &p in parts {
                let t = self.value(p);
                let blk = t.shape()[1] * inner;
                out.extend_from_slice(&t.data()[b * blk..(b + 1) * blk]);
            }
        }
        let mut shape = vec![n, channels];
        shape.extend_from_slice(rest);
        let out = Tensor::from_vec(&shape, out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Cow::Owned(out), Op::Concat(parts.to_vec()), rg))
    }

    /// Global average pooling `N x C x H x W -> N x C`.
    pub fn avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let [n, c, h, w] = dims4(t)?;
        let hw = h * w;
        let scale = T::one() / T::of(hw as f64);
        let out: Vec<T> = t.data().chunks_exact(hw).map(|plane| plane.iter().copied().sum::<T>() * scale).collect();
        let out = Tensor::from_vec(&[n, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(Cow::Owned(out), Op::AvgPool(x), rg))
    }

    /// `y = x w^T + b` for `x: N x In`, `w: Out x In`, `b: Out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.shape().len() != 2 || tw.shape().len() != 2 || tx.shape()[1] != tw.shape()[1] {
            return Err(Error::Shape(format!("linear {:?} x {:?}", tx.shape(), tw.shape())));
        }
        let (n, inp, out_f) = (tx.shape()[0], tx.shape()[1], tw.shape()[0]);
        let mut out = Vec::with_capacity(n * out_f);
        for _ in 0..n {
            out.extend_from_slice(tb.data());
        }
        gemm(MatRef::new(tx.data(), n, inp), MatRef::new(tw.data(), out_f, inp).t(), T::one(), &mut out);
        let out = Tensor::from_vec(&[n, out_f], out)?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Cow::Owned(out), Op::Linear { x, w, b }, rg))
    }

    /// Reverse sweep from `root`, seeded with `seed` (same shape as root).
    pub fn backward(&self, root: Var, seed: Tensor<T>) -> Result<Grads<T>> {
        if seed.shape() != self.value(root).shape() {
            return Err(Error::Shape(format!(
                "seed gradient {:?} for root {:?}",
                seed.shape(),
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Relu(x) => {
                    let mut d = g;
                    for (dv, &y) in d.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= T::zero() {
                            *dv = T::zero();
                        }
                    }
                    accumulate(&mut grads, self, *x, d);
                }
                Op::LeakyRelu(x, slope) => {
                    let k = T::of(*slope);
                    let mut d = g;
                    for (dv, &y) in d.data_mut().iter_mut().zip(node.value.data()) {
                        if y <= T::zero() {
                            *dv *= k;
                        }
                    }
                    accumulate(&mut grads, self, *x, d);
                }
                Op::Add(a, b) => {
                    if self.rg(*b) {
                        accumulate(&mut grads, self, *b, g.clone());
                    }
                    accumulate(&mut grads, self, *a, g);
                }
                Op::Upsample2(x) => {
                    let [n, c, h2, w2] = dims4(&g)?;
                    let (h, w) = (h2 / 2, w2 / 2);
                    let mut d = vec![T::zero(); n * c * h * w];
                    let src = g.data();
                    for plane in 0..n * c {
                        let s = &src[plane * h2 * w2..(plane + 1) * h2 * w2];
                        let dp = &mut d[plane * h * w..(plane + 1) * h * w];
                        for y in 0..h {
                            for xx in 0..w {
                                let top = 2 * y * w2 + 2 * xx;
                                dp[y * w + xx] = s[top] + s[top + 1] + s[top + w2] + s[top + w2 + 1];
                            }
                        }
                    }
                    accumulate(&mut grads, self, *x, Tensor::from_vec(&[n, c, h, w], d)?);
                }
                Op::Concat(parts) => {
                    let n = g.shape()[0];
                    let inner: usize = g.shape()[2..].iter().product();
                    let total_c = g.shape()[1];
                    let mut offset = 0;
                    for &p in parts {
                        let shape = self.value(p).shape().to_vec();
                        let c = shape[1];
                        if self.rg(p) {
                            let mut d = Vec::with_capacity(n * c * inner);
                            for b in 0..n {
                                let start = (b * total_c + offset) * inner;
                                d.extend_from_slice(&g.data()[start..start + c * inner]);
                            }
                            accumulate(&mut grads, self, p, Tensor::from_vec(&shape, d)?);
                        }
                        offset += c;
                    }
                }
                Op::AvgPool(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    let hw = shape[2] * shape[3];
                    let scale = T::one() / T::of(hw as f64);
                    let mut d = Vec::with_capacity(g.len() * hw);
                    for &gv in g.data() {
                        d.extend(std::iter::repeat_n(gv * scale, hw));
                    }
                    accumulate(&mut grads, self, *x, Tensor::from_vec(&shape, d)?);
                }
                Op::Linear { x, w, b } => {
                    let (tx, tw) = (self.value(*x), self.value(*w));
                    let (n, inp, out_f) = (tx.shape()[0], tx.shape()[1], tw.shape()[0]);
                    if self.rg(*w) {
                        let mut dw = vec![T::zero(); out_f * inp];
                        gemm(MatRef::new(g.data(), n, out_f).t(), MatRef::new(tx.data(), n, inp), T::zero(), &mut dw);
                        accumulate(&mut grads, self, *w, Tensor::from_vec(&[out_f, inp], dw)?);
                    }
                    if self.rg(*b) {
                        let mut db = vec![T::zero(); out_f];
                        for row in g.data().chunks_exact(out_f) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, self, *b, Tensor::from_vec(&[out_f], db)?);
                    }
                    if self.rg(*x) {
                        let mut dx = vec![T::zero(); n * inp];
                        gemm(MatRef::new(g.data(), n, out_f), MatRef::new(tw.data(), out_f, inp), T::zero(), &mut dx);
                        accumulate(&mut grads, self, *x, Tensor::from_vec(&[n, inp], dx)?);
                    }
                }
                Op::Conv { x, w, b, geom } => {
                    let (dx, dw, db) = conv_backward(self.value(*x), self.value(*w), &g, *geom, self.rg(*x))?;
                    if self.rg(*w) {
                        accumulate(&mut grads, self, *w, dw);
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, self, *b, db);
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut grads, self, *x, dx);
                    }
                }
            }
        }
        Ok(Grads { grads })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], g: &Graph<'_, T>, v: Var, d: Tensor<T>) {
    if !g.rg(v) {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

/// Gradients produced by [`Graph::backward`], looked up by leaf.
pub struct Grads<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` was unreachable.
    pub fn take_or_zeros(&mut self, v: Var, like: &[usize]) -> Tensor<T> {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(like))
    }
}

pub(crate) fn dims4<T: Scalar>(t: &Tensor<T>) -> Result<[usize; 4]> {
    match t.shape() {
        &[n, c, h, w] => Ok([n, c, h, w]),
        s => Err(Error::Shape(format!("expected N x C x H x W, got {s:?}"))),
    }
}

fn conv_out(size: usize, k: usize, geom: ConvGeom) -> Result<usize> {
    let padded = size + 2 * geom.pad;
    if padded < k {
        return Err(Error::Shape(format!("kernel {k} larger than padded input {padded}")));
    }
    Ok((padded - k) / geom.stride + 1)
}

struct ConvDims {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvDims {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], d: &ConvDims, cols: &mut [T]) {
    let howo = d.ho * d.wo;
    for c in 0..d.c {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = ((c * d.k + ky) * d.k + kx) * howo;
                let dst = &mut cols[row..row + howo];
                for oy in 0..d.ho {
                    let out_row = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    if d.stride == 1 {
                        // valid ox: 0 <= ox + kx - pad < w
                        let lo = d.pad.saturating_sub(kx).min(d.wo);
                        let hi = (d.w + d.pad).saturating_sub(kx).min(d.wo).max(lo);
                        out_row[..lo].fill(T::zero());
                        out_row[hi..].fill(T::zero());
                        let start = lo + kx - d.pad;
                        out_row[lo..hi].copy_from_slice(&src_row[start..start + (hi - lo)]);
                    } else {
                        for (ox, o) in out_row.iter_mut().enumerate() {
                            let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                            *o = if ix < 0 || ix >= d.w as isize { T::zero() } else { src_row[ix as usize] };
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], d: &ConvDims, dx: &mut [T]) {
    let howo = d.ho * d.wo;
    for c in 0..d.c {
        let plane = &mut dx[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.k {
            for kx in 0..d.k {
                let row = ((c * d.k + ky) * d.k + kx) * howo;
                let src = &cols[row..row + howo];
                for oy in 0..d.ho {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    let in_row = &src[oy * d.wo..(oy + 1) * d.wo];
                    for (ox, &v) in in_row.iter().enumerate() {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn conv_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, geom: ConvGeom) -> Result<(usize, usize, ConvDims)> {
    let [n, c, h, wd] = dims4(x)?;
    let [o, ci, k, k2] = dims4(w)?;
    if ci != c || k != k2 {
        return Err(Error::Shape(format!("conv input {:?} with weight {:?}", x.shape(), w.shape())));
    }
    let ho = conv_out(h, k, geom)?;
    let wo = conv_out(wd, k, geom)?;
    Ok((n, o, ConvDims { c, h, w: wd, k, ho, wo, stride: geom.stride, pad: geom.pad }))
}

fn conv_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, geom: ConvGeom) -> Result<Tensor<T>> {
    let (n, o, d) = conv_dims(x, w, geom)?;
    if b.len() != o {
        return Err(Error::Shape(format!("conv bias {:?} for {} outputs", b.shape(), o)));
    }
    let kk = d.c * d.k * d.k;
    let howo = d.ho * d.wo;
    let mut out = vec![T::zero(); n * o * howo];
    let mut cols = if d.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * howo] };
    let in_plane = d.c * d.h * d.w;
    for s in 0..n {
        let xs = &x.data()[s * in_plane..(s + 1) * in_plane];
        let os = &mut out[s * o * howo..(s + 1) * o * howo];
        for (oc, chunk) in os.chunks_exact_mut(howo).enumerate() {
            chunk.fill(b.data()[oc]);
        }
        let colref: &[T] = if d.is_pointwise() {
            xs
        } else {
            im2col(xs, &d, &mut cols);
            &cols
        };
        gemm(MatRef::new(w.data(), o, kk), MatRef::new(colref, kk, howo), T::one(), os);
    }
    Tensor::from_vec(&[n, o, d.ho, d.wo], out)
}

type ConvGrads<T> = (Option<Tensor<T>>, Tensor<T>, Tensor<T>);

fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
    geom: ConvGeom,
    want_dx: bool,
) -> Result<ConvGrads<T>> {
    let (n, o, d) = conv_dims(x, w, geom)?;
    let kk = d.c * d.k * d.k;
    let howo = d.ho * d.wo;
    let in_plane = d.c * d.h * d.w;
    let mut dw = vec![T::zero(); o * kk];
    let mut db = vec![T::zero(); o];
    let mut dx = if want_dx { vec![T::zero(); n * in_plane] } else { Vec::new() };
    let mut cols = if d.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * howo] };
    let mut dcols = vec![T::zero(); if want_dx { kk * howo } else { 0 }];
    for s in 0..n {
        let xs = &x.data()[s * in_plane..(s + 1) * in_plane];
        let gs = &g.data()[s * o * howo..(s + 1) * o * howo];
        for (oc, chunk) in gs.chunks_exact(howo).enumerate() {
            db[oc] += chunk.iter().copied().sum::<T>();
        }
        let colref: &[T] = if d.is_pointwise() {
            xs
        } else {
            im2col(xs, &d, &mut cols);
            &cols
        };
        gemm(MatRef::new(gs, o, howo), MatRef::new(colref, kk, howo).t(), T::one(), &mut dw);
        if want_dx {
            let dxs = &mut dx[s * in_plane..(s + 1) * in_plane];
            if d.is_pointwise() {
                gemm(MatRef::new(w.data(), o, kk).t(), MatRef::new(gs, o, howo), T::one(), dxs);
            } else {
                gemm(MatRef::new(w.data(), o, kk).t(), MatRef::new(gs, o, howo), T::zero(), &mut dcols);
                col2im(&dcols, &d, dxs);
            }
        }
    }
    let dx = if want_dx { Some(Tensor::from_vec(x.shape(), dx)?) } else { None };
    Ok((dx, Tensor::from_vec(w.shape(), dw)?, Tensor::from_vec(&[o], db)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct-loop convolution, independent of im2col/gemm.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, geom: ConvGeom) -> Tensor<f64> {
        let [n, c, h, wd] = dims4(x).unwrap();
        let [o, _, k, _] = dims4(w).unwrap();
        let ho = (h + 2 * geom.pad - k) / geom.stride + 1;
        let wo = (wd + 2 * geom.pad - k) / geom.stride + 1;
        let mut out = Tensor::zeros(&[n, o, ho, wo]);
        for s in 0..n {
            for oc in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.data()[oc];
                        for ic in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                                    let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.data()[((s * c + ic) * h + iy as usize) * wd + ix as usize]
                                            * w.data()[((oc * c + ic) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((s * o + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (1, 2, 0), (3, 1, 0)] {
            let x = rand_tensor(&mut rng, &[2, 3, 7, 6]);
            let w = rand_tensor(&mut rng, &[4, 3, k, k]);
            let b = rand_tensor(&mut rng, &[4]);
            let geom = ConvGeom { stride, pad };
            let fast = conv_forward(&x, &w, &b, geom).unwrap();
            let slow = naive_conv(&x, &w, &b, geom);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "k={k} s={stride} p={pad}");
            }
        }
    }

    /// Scalar objective sum(out * probe) and its finite-difference gradient.
    fn check_grad(build: impl Fn(&mut Graph<'_, f64>, Var) -> Var, shape: &[usize]) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = rand_tensor(&mut rng, shape);
        let mut g = Graph::new();
        let xv = g.input(x0.clone());
        let out = build(&mut g, xv);
        let probe = rand_tensor(&mut rng, g.value(out).shape());
        let grads = g.backward(out, probe.clone()).unwrap();
        let analytic = grads.get(xv).unwrap().clone();
        let f = |x: &Tensor<f64>| {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let out = build(&mut g, xv);
            g.value(out).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            xp.data_mut()[i] += h;
            let mut xm = x0.clone();
            xm.data_mut()[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let an = analytic.data()[i];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "index {i}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn conv_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
        let b = rand_tensor(&mut rng, &[3]);
        for stride in [1, 2] {
            check_grad(
                |g, x| {
                    let wv = g.constant(w.clone());
                    let bv = g.constant(b.clone());
                    g.conv2d(x, wv, bv, ConvGeom { stride, pad: 1 }).unwrap()
                },
                &[2, 2, 5, 6],
            );
        }
    }

    #[test]
    fn conv_weight_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, &[2, 2, 5, 5]);
        for (k, stride, pad) in [(3, 1, 1), (1, 1, 0), (1, 2, 0)] {
            let x = x.clone();
            check_grad(
                move |g, w| {
                    let xv = g.constant(x.clone());
                    let bv = g.constant(Tensor::zeros(&[3]));
                    g.conv2d(xv, w, bv, ConvGeom { stride, pad }).unwrap()
                },
                &[3, 2, k, k],
            );
        }
    }

    #[test]
    fn composite_ops_gradient() {
        check_grad(
            |g, x| {
                let up = g.upsample2(x).unwrap();
                let r = g.relu(up);
                let l = g.leaky_relu(up, 0.1);
                let cat = g.concat(&[r, l]).unwrap();
                let s = g.add(cat, cat).unwrap();
                g.avg_pool(s).unwrap()
            },
            &[2, 3, 2, 3],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = rand_tensor(&mut rng, &[4, 5]);
        let b = rand_tensor(&mut rng, &[4]);
        check_grad(
            |g, x| {
                let wv = g.constant(w.clone());
                let bv = g.constant(b.clone());
                g.linear(x, wv, bv).unwrap()
            },
            &[3, 5],
        );
    }

    #[test]
    fn shared_leaf_accumulates() {
        let w = Tensor::from_vec(&[1, 1], vec![2.0f64]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.0f64]).unwrap();
        let mut g = Graph::new();
        let wv = g.param(&w);
        let bv = g.param(&b);
        let x1 = g.constant(Tensor::from_vec(&[1, 1], vec![3.0]).unwrap());
        let x2 = g.constant(Tensor::from_vec(&[1, 1], vec![5.0]).unwrap());
        let y1 = g.linear(x1, wv, bv).unwrap();
        let y2 = g.linear(x2, wv, bv).unwrap();
        let s = g.add(y1, y2).unwrap();
        let grads = g.backward(s, Tensor::from_vec(&[1, 1], vec![1.0]).unwrap()).unwrap();
        assert_eq!(grads.get(wv).unwrap().data(), &[8.0]);
        assert_eq!(grads.get(bv).unwrap().data(), &[2.0]);
    }
}
