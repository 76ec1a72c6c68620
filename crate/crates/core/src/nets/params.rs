use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::graph::{ConvGeom, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ordered, named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    /// Adds a `k x k` convolution (weight then bias); returns their indices.
    pub fn add_conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> (usize, usize) {
        let w = self.push(format!("{name}.weight"), Tensor::zeros(&[cout, cin, k, k]));
        let b = self.push(format!("{name}.bias"), Tensor::zeros(&[cout]));
        (w, b)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Borrow every tensor into `g` as a trainable (or frozen) leaf.
    pub fn bind<'p>(&'p self, g: &mut Graph<'p, T>, trainable: bool) -> Vec<Var> {
        self.tensors.iter().map(|t| if trainable { g.param(t) } else { g.frozen(t) }).collect()
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            buf.clear();
            for &v in t.data() {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        hex::encode(h.finalize())
    }

    /// Fan-in scaled uniform initialisation: weights ~ U(-b, b) with
    /// `b = sqrt(6 / fan_in)`, biases zero. Deterministic in `seed`.
    pub(crate) fn init_uniform(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            if name.ends_with(".bias") {
                continue;
            }
            let fan_in: usize = t.shape()[1..].iter().product();
            let bound = (6.0 / fan_in.max(1) as f64).sqrt();
            for v in t.data_mut() {
                *v = T::of(rng.gen_range(-bound..bound));
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    pub(crate) fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Self {
        Self { names, tensors }
    }
}

/// Indices of a convolution's tensors plus its geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub weight: usize,
    pub bias: usize,
    pub geom: ConvGeom,
}

impl ConvSpec {
    pub(crate) fn add<T: Scalar>(
        set: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        let (weight, bias) = set.add_conv(name, cin, cout, k);
        Self { weight, bias, geom: ConvGeom { stride, pad: k / 2 } }
    }

    pub(crate) fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, vars: &[Var], x: Var) -> crate::Result<Var> {
        g.conv2d(x, vars[self.weight], vars[self.bias], self.geom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let empty = ParamSet::<f32>::new();
        assert_eq!(empty.count(), 0);
        let mut one = ParamSet::<f32>::new();
        one.add_conv("c", 2, 4, 3);
        assert_eq!(one.count(), 2 * 4 * 9 + 4);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let mut a = ParamSet::<f32>::new();
        a.add_conv("c", 3, 5, 3);
        let mut b = a.clone();
        a.init_uniform(9);
        b.init_uniform(9);
        assert_eq!(a.digest(), b.digest());
        let bound = (6.0f32 / 27.0).sqrt();
        assert!(a.get(0).data().iter().all(|v| v.abs() <= bound));
        assert!(a.get(1).data().iter().all(|&v| v == 0.0));
        b.init_uniform(10);
        assert_ne!(a.digest(), b.digest());
    }
}
