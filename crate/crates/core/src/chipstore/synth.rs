//! Synthetic bitemporal PolSAR chips with known landslide masks.
//!
//! Each chip starts from a smooth log-normal backscatter scene shared by the
//! pre- and post-event images. Positive chips get elliptical blobs in which
//! the post-event amplitude is multiplied by `contrast`. Both images then
//! receive independent multiplicative speckle drawn from a unit-mean gamma
//! distribution with shape `looks`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::chip::{AmplitudeImage, Chip, ChipSet, CHIP_SIZE, N_CHANNELS};
use crate::error::{Error, Result};

/// Mean amplitudes of the VV and VH backgrounds.
const CHANNEL_BASE: [f64; N_CHANNELS] = [0.25, 0.06];
const TEXTURE_TERMS: usize = 3;
const TEXTURE_AMPLITUDE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_chips: usize,
    #[serde(default = "default_positive_fraction")]
    pub positive_fraction: f64,
    #[serde(default = "default_looks")]
    pub looks: u32,
    #[serde(default = "default_contrast")]
    pub contrast: f64,
    #[serde(default = "default_blob_count")]
    pub blob_count_range: (u32, u32),
    #[serde(default = "default_blob_radius")]
    pub blob_radius_range_px: (u32, u32),
    #[serde(default = "default_chip_size")]
    pub chip_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Prefix for chip ids; defaults to `syn<seed>`.
    #[serde(default)]
    pub id_prefix: Option<String>,
}

fn default_positive_fraction() -> f64 {
    0.5
}
fn default_looks() -> u32 {
    4
}
fn default_contrast() -> f64 {
    2.0
}
fn default_blob_count() -> (u32, u32) {
    (1, 4)
}
fn default_blob_radius() -> (u32, u32) {
    (3, 12)
}
fn default_chip_size() -> usize {
    CHIP_SIZE
}

impl SyntheticConfig {
    pub fn new(n_chips: usize, seed: u64) -> Self {
        Self {
            n_chips,
            positive_fraction: default_positive_fraction(),
            looks: default_looks(),
            contrast: default_contrast(),
            blob_count_range: default_blob_count(),
            blob_radius_range_px: default_blob_radius(),
            chip_size: default_chip_size(),
            seed,
            id_prefix: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_chips == 0 {
            return bad("n_chips must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return bad(format!("positive_fraction {} outside [0, 1]", self.positive_fraction));
        }
        if self.looks == 0 {
            return bad("looks must be >= 1".into());
        }
        if !(self.contrast.is_finite() && self.contrast > 0.0) {
            return bad(format!("contrast {} must be > 0", self.contrast));
        }
        let (c0, c1) = self.blob_count_range;
        if c0 == 0 || c0 > c1 {
            return bad(format!("blob_count_range {:?} must be nonempty with min >= 1", self.blob_count_range));
        }
        let (r0, r1) = self.blob_radius_range_px;
        if r0 == 0 || r0 > r1 {
            return bad(format!("blob_radius_range_px {:?} must be nonempty with min >= 1", self.blob_radius_range_px));
        }
        if 2 * r1 as usize + 1 > self.chip_size {
            return bad(format!("blob radius {r1} does not fit a {} px chip", self.chip_size));
        }
        Ok(())
    }

    fn prefix(&self) -> String {
        self.id_prefix.clone().unwrap_or_else(|| format!("syn{}", self.seed))
    }
}

/// Unit-mean gamma speckle sampler.
pub struct Speckle {
    dist: Gamma<f64>,
}

impl Speckle {
    pub fn new(looks: u32) -> Result<Self> {
        let l = f64::from(looks.max(1));
        Gamma::new(l, 1.0 / l).map(|dist| Self { dist }).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.dist.sample(rng)
    }
}

fn scene<R: Rng>(rng: &mut R, size: usize) -> Vec<f64> {
    let terms: Vec<(f64, f64, f64, f64)> = (0..TEXTURE_TERMS)
        .map(|_| {
            let fy = rng.gen_range(0.5..3.0) / size as f64;
            let fx = rng.gen_range(0.5..3.0) / size as f64;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp = rng.gen_range(0.5..1.0) * TEXTURE_AMPLITUDE;
            (fy, fx, phase, amp)
        })
        .collect();
    let mut field = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let v: f64 = terms
                .iter()
                .map(|&(fy, fx, ph, a)| a * (std::f64::consts::TAU * (fy * y as f64 + fx * x as f64) + ph).cos())
                .sum();
            field.push(v.exp());
        }
    }
    field
}

fn blobs<R: Rng>(rng: &mut R, cfg: &SyntheticConfig) -> Vec<u8> {
    let size = cfg.chip_size;
    let mut mask = vec![0u8; size * size];
    let count = rng.gen_range(cfg.blob_count_range.0..=cfg.blob_count_range.1);
    let (r0, r1) = cfg.blob_radius_range_px;
    for _ in 0..count {
        let ry = rng.gen_range(r0..=r1) as usize;
        let rx = rng.gen_range(r0..=r1) as usize;
        // keep the whole ellipse inside the chip
        let cy = rng.gen_range(ry..size - ry);
        let cx = rng.gen_range(rx..size - rx);
        for y in cy - ry..=cy + ry {
            for x in cx - rx..=cx + rx {
                let dy = (y as f64 - cy as f64) / ry as f64;
                let dx = (x as f64 - cx as f64) / rx as f64;
                if dy * dy + dx * dx <= 1.0 {
                    mask[y * size + x] = 1;
                }
            }
        }
    }
    mask
}

fn synth_chip(cfg: &SyntheticConfig, index: usize, positive: bool, speckle: &Speckle) -> Result<Chip> {
    let size = cfg.chip_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let texture = scene(&mut rng, size);
    let mask = if positive { blobs(&mut rng, cfg) } else { vec![0u8; size * size] };
    let n = size * size;
    let mut pre = Vec::with_capacity(N_CHANNELS * n);
    let mut post = Vec::with_capacity(N_CHANNELS * n);
    for base in CHANNEL_BASE {
        for i in 0..n {
            let s = base * texture[i];
            pre.push((s * speckle.sample(&mut rng)) as f32);
            let change = if mask[i] == 1 { cfg.contrast } else { 1.0 };
            post.push((s * change * speckle.sample(&mut rng)) as f32);
        }
    }
    Chip::new(
        format!("{}_{index:05}", cfg.prefix()),
        AmplitudeImage::new(N_CHANNELS, size, size, pre)?,
        AmplitudeImage::new(N_CHANNELS, size, size, post)?,
        mask,
    )
}

/// Deterministic in `config.seed`; exactly `round(n * positive_fraction)`
/// positive chips, placed at seeded random indices.
pub fn generate_synthetic_chipset(config: &SyntheticConfig) -> Result<ChipSet> {
    config.validate()?;
    let n_pos = (config.n_chips as f64 * config.positive_fraction).round() as usize;
    let mut order: Vec<usize> = (0..config.n_chips).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let mut positive = vec![false; config.n_chips];
    for &i in &order[..n_pos] {
        positive[i] = true;
    }
    let speckle = Speckle::new(config.looks)?;
    let chips =
        (0..config.n_chips).map(|i| synth_chip(config, i, positive[i], &speckle)).collect::<Result<Vec<_>>>()?;
    let provenance = format!(
        "synthetic seed={} looks={} contrast={} n={}",
        config.seed, config.looks, config.contrast, config.n_chips
    );
    ChipSet::new(chips, provenance)
}

/// Elementwise mean of co-registered acquisitions.
pub fn average_revisits(images: &[AmplitudeImage]) -> Result<AmplitudeImage> {
    let first = images.first().ok_or_else(|| Error::Precondition("no revisits to average".into()))?;
    if let Some(bad) = images.iter().find(|i| i.shape() != first.shape()) {
        return Err(Error::Shape(format!("revisit {:?} vs {:?}", bad.shape(), first.shape())));
    }
    let k = images.len() as f64;
    let data = (0..first.data().len())
        .map(|i| (images.iter().map(|img| f64::from(img.data()[i])).sum::<f64>() / k) as f32)
        .collect();
    let [c, h, w] = first.shape();
    AmplitudeImage::new(c, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, seed: u64) -> SyntheticConfig {
        SyntheticConfig { chip_size: 32, blob_radius_range_px: (2, 6), ..SyntheticConfig::new(n, seed) }
    }

    #[test]
    fn deterministic_in_seed() {
        let cfg = SyntheticConfig { n_chips: 100, ..small(100, 7) };
        let a = generate_synthetic_chipset(&cfg).unwrap();
        let b = generate_synthetic_chipset(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_chipset(&small(100, 8)).unwrap();
        assert_ne!(a.chips()[0].pre(), c.chips()[0].pre());
    }

    #[test]
    fn positive_fraction_and_masks() {
        let set = generate_synthetic_chipset(&small(41, 3)).unwrap();
        assert_eq!(set.positives(), 21); // round(20.5)
        for c in set.chips() {
            assert_eq!(c.has_landslide(), c.positive_pixels() > 0);
        }
        let none = generate_synthetic_chipset(&SyntheticConfig { positive_fraction: 0.0, ..small(5, 1) }).unwrap();
        assert!(none.chips().iter().all(|c| c.positive_pixels() == 0));
    }

    #[test]
    fn invalid_configs() {
        assert!(SyntheticConfig { looks: 0, ..small(4, 1) }.validate().is_err());
        assert!(SyntheticConfig { contrast: 0.0, ..small(4, 1) }.validate().is_err());
        assert!(SyntheticConfig { blob_radius_range_px: (5, 2), ..small(4, 1) }.validate().is_err());
        assert!(SyntheticConfig { blob_radius_range_px: (2, 16), ..small(4, 1) }.validate().is_err());
        assert!(SyntheticConfig { positive_fraction: 1.2, ..small(4, 1) }.validate().is_err());
    }

    #[test]
    fn speckle_has_unit_mean() {
        let s = Speckle::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 200_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let v = s.sample(&mut rng);
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!((var - 0.25).abs() < 0.01, "var {var}"); // 1 / looks
    }

    #[test]
    fn revisit_average_basics() {
        let a = AmplitudeImage::new(2, 2, 2, (0..8).map(|v| v as f32).collect()).unwrap();
        assert_eq!(average_revisits(std::slice::from_ref(&a)).unwrap(), a);
        let a3 = AmplitudeImage::new(2, 2, 2, a.data().iter().map(|v| 3.0 * v).collect()).unwrap();
        let avg = average_revisits(&[a.clone(), a3]).unwrap();
        let a2: Vec<f32> = a.data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(avg.data(), a2.as_slice());
        assert!(average_revisits(&[]).is_err());
        let other = AmplitudeImage::zeros(2, 3, 2);
        assert!(average_revisits(&[a, other]).is_err());
    }

    #[test]
    fn revisit_average_reduces_speckle_variance() {
        // Monte Carlo: constant scene of amplitude 1, 5 revisits of 1-look speckle.
        let s = Speckle::new(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut draw =
            || AmplitudeImage::new(1, 64, 64, (0..64 * 64).map(|_| s.sample(&mut rng) as f32).collect()).unwrap();
        let single = draw();
        let revisits: Vec<_> = (0..5).map(|_| draw()).collect();
        let avg = average_revisits(&revisits).unwrap();
        let var = |img: &AmplitudeImage| {
            let d = img.data();
            let m = d.iter().map(|&v| v as f64).sum::<f64>() / d.len() as f64;
            d.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64
        };
        let (v1, v5) = (var(&single), var(&avg));
        assert!(v5 < v1, "{v5} !< {v1}");
        // expected ratio 1/5
        assert!((v5 / v1 - 0.2).abs() < 0.05, "ratio {}", v5 / v1);
    }
}
