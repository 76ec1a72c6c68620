use serde::{Deserialize, Serialize};

use super::chip::{Chip, ChipSet, N_CHANNELS};
use crate::error::{Error, Result};

/// Amplitude floor applied before the dB transform.
pub const AMPLITUDE_FLOOR: f64 = 1e-6;

/// Per-polarisation dB statistics, shared by pre and post images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean_db: [f64; N_CHANNELS],
    pub std_db: [f64; N_CHANNELS],
}

#[inline]
pub fn to_db(amplitude: f32) -> f64 {
    10.0 * f64::from(amplitude).max(AMPLITUDE_FLOOR).log10()
}

/// A chip mapped to standardised dB inputs, ready for the networks.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedChip {
    pub chip_id: String,
    pub size: usize,
    /// `2 x size x size`
    pub pre: Vec<f32>,
    pub post: Vec<f32>,
    pub mask: Vec<u8>,
    pub has_landslide: bool,
}

impl NormalizedChip {
    pub fn positive_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

impl NormStats {
    /// Mean and population standard deviation of dB values, per channel,
    /// pooled over pre and post images of `set`.
    pub fn compute(set: &ChipSet) -> Result<Self> {
        let mut sum = [0.0f64; N_CHANNELS];
        let mut sq = [0.0f64; N_CHANNELS];
        let mut count = 0usize;
        for chip in set.chips() {
            for img in [chip.pre(), chip.post()] {
                for c in 0..N_CHANNELS {
                    for &v in img.channel(c) {
                        let d = to_db(v);
                        sum[c] += d;
                        sq[c] += d * d;
                    }
                }
            }
            count += 2 * chip.size() * chip.size();
        }
        if count == 0 {
            return Err(Error::Precondition("cannot compute statistics of an empty chip set".into()));
        }
        let mut stats = NormStats { mean_db: [0.0; N_CHANNELS], std_db: [0.0; N_CHANNELS] };
        for c in 0..N_CHANNELS {
            let mean = sum[c] / count as f64;
            let var = (sq[c] / count as f64 - mean * mean).max(0.0);
            stats.mean_db[c] = mean;
            stats.std_db[c] = var.sqrt();
        }
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        for c in 0..N_CHANNELS {
            if !(self.std_db[c].is_finite() && self.std_db[c] > 1e-12) {
                return Err(Error::Data(format!("channel {c} has zero standard deviation")));
            }
        }
        Ok(())
    }

    pub fn apply(&self, chip: &Chip) -> NormalizedChip {
        let map = |img: &super::chip::AmplitudeImage| -> Vec<f32> {
            (0..N_CHANNELS)
                .flat_map(|c| {
                    img.channel(c).iter().map(move |&v| ((to_db(v) - self.mean_db[c]) / self.std_db[c]) as f32)
                })
                .collect()
        };
        NormalizedChip {
            chip_id: chip.chip_id().to_string(),
            size: chip.size(),
            pre: map(chip.pre()),
            post: map(chip.post()),
            mask: chip.mask().to_vec(),
            has_landslide: chip.has_landslide(),
        }
    }
}

/// Standardise every chip in dB. With `stats = None` the statistics are
/// computed from `set` itself (use the pretraining split for that).
pub fn normalize_chipset(set: &ChipSet, stats: Option<&NormStats>) -> Result<(Vec<NormalizedChip>, NormStats)> {
    let stats = match stats {
        Some(s) => {
            s.validate()?;
            s.clone()
        }
        None => NormStats::compute(set)?,
    };
    let out = set.chips().iter().map(|c| stats.apply(c)).collect();
    Ok((out, stats))
}

/// Mean and population std of normalised values per channel.
pub fn channel_moments(chips: &[NormalizedChip]) -> [(f64, f64); N_CHANNELS] {
    let mut out = [(0.0, 0.0); N_CHANNELS];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut n = 0usize;
        for chip in chips {
            let plane = chip.size * chip.size;
            for img in [&chip.pre, &chip.post] {
                for &v in &img[c * plane..(c + 1) * plane] {
                    sum += f64::from(v);
                    sq += f64::from(v) * f64::from(v);
                    n += 1;
                }
            }
        }
        let mean = sum / n as f64;
        *slot = (mean, (sq / n as f64 - mean * mean).max(0.0).sqrt());
    }
    out
}
