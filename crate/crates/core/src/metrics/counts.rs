//! Per-chip pixel miscounts and their summary statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::pr::check_labels;

/// Default decision threshold on probabilities.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Pixel is positive iff its probability is strictly above `threshold`.
pub fn binarize<T: Scalar>(probs: &[T], threshold: f64) -> Vec<u8> {
    probs.iter().map(|p| u8::from(p.as_f64() > threshold)).collect()
}

/// `(|sum(pred) - sum(truth)|, sum(pred) - sum(truth))` for one chip.
pub fn count_errors(pred_mask: &[u8], true_mask: &[u8]) -> Result<(u64, i64)> {
    if pred_mask.len() != true_mask.len() {
        return Err(Error::Shape(format!("pred {} vs true {} pixels", pred_mask.len(), true_mask.len())));
    }
    let predicted = check_labels(pred_mask)? as i64;
    let actual = check_labels(true_mask)? as i64;
    let d = predicted - actual;
    Ok((d.unsigned_abs(), d))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChipCountError {
    pub chip_id: String,
    pub dl1: u64,
    pub dcount: i64,
    pub true_positive_pixels: u64,
}

impl ChipCountError {
    pub fn compute(chip_id: &str, pred_mask: &[u8], true_mask: &[u8]) -> Result<Self> {
        let (dl1, dcount) = count_errors(pred_mask, true_mask)?;
        let true_positive_pixels = true_mask.iter().filter(|&&m| m == 1).count() as u64;
        Ok(Self { chip_id: chip_id.to_string(), dl1, dcount, true_positive_pixels })
    }

    pub fn is_empty_chip(&self) -> bool {
        self.true_positive_pixels == 0
    }
}

/// Lower median: element `(n - 1) / 2` of the sorted values.
pub fn lower_median(values: &[i64]) -> Option<i64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    Some(v[(v.len() - 1) / 2])
}

/// Sample standard deviation divided by `sqrt(n)`; zero for a single value.
pub fn std_of_mean(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    // shifted by the first value so identical inputs give exactly zero
    let d: Vec<f64> = values.iter().map(|v| v - values[0]).collect();
    let sum: f64 = d.iter().sum();
    let sq: f64 = d.iter().map(|x| x * x).sum();
    let var = ((sq - sum * sum / n as f64) / (n - 1) as f64).max(0.0);
    var.sqrt() / (n as f64).sqrt()
}

/// The three miscount panels: ΔL1 over all chips, Δcount over empty chips
/// and over landslide chips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMedians {
    pub dl1_all: Option<i64>,
    pub dcount_empty: Option<i64>,
    pub dcount_landslide: Option<i64>,
}

impl CountMedians {
    pub fn of(errors: &[ChipCountError]) -> Self {
        let all: Vec<i64> = errors.iter().map(|e| e.dl1 as i64).collect();
        let empty: Vec<i64> = errors.iter().filter(|e| e.is_empty_chip()).map(|e| e.dcount).collect();
        let slides: Vec<i64> = errors.iter().filter(|e| !e.is_empty_chip()).map(|e| e.dcount).collect();
        Self {
            dl1_all: lower_median(&all),
            dcount_empty: lower_median(&empty),
            dcount_landslide: lower_median(&slides),
        }
    }
}
