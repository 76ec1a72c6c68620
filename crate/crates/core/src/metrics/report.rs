//! Per-run metrics and their aggregation into a report.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chipstore::NormalizedChip;
use crate::error::{Error, Result};

use super::counts::{binarize, std_of_mean, ChipCountError, CountMedians, DECISION_THRESHOLD};
use super::pr::{aprc_of, random_baseline_aprc};

/// Metrics of one set of predictions over a chip set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub aprc: f64,
    pub medians: CountMedians,
}

/// Pooled pixel APRC plus per-chip miscounts at the default threshold.
pub fn evaluate_predictions(probs: &[Vec<f64>], chips: &[NormalizedChip]) -> Result<(RunMetrics, Vec<ChipCountError>)> {
    if probs.len() != chips.len() || chips.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} chips", probs.len(), chips.len())));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut errors = Vec::with_capacity(chips.len());
    for (p, chip) in probs.iter().zip(chips) {
        errors.push(ChipCountError::compute(&chip.chip_id, &binarize(p, DECISION_THRESHOLD), &chip.mask)?);
        scores.extend_from_slice(p);
        labels.extend_from_slice(&chip.mask);
    }
    let aprc = aprc_of(&scores, &labels)?;
    Ok((RunMetrics { aprc, medians: CountMedians::of(&errors) }, errors))
}

/// Pooled positive-pixel fraction of a chip set.
pub fn pixel_baseline(chips: &[NormalizedChip]) -> Result<f64> {
    let labels: Vec<u8> = chips.iter().flat_map(|c| c.mask.iter().copied()).collect();
    random_baseline_aprc(&labels)
}

/// Standard deviation of the mean over runs, per reported quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBars {
    pub aprc: f64,
    pub dl1_all: Option<f64>,
    pub dcount_empty: Option<f64>,
    pub dcount_landslide: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Headline values, computed from ensemble-averaged predictions.
    pub aprc: f64,
    pub aprc_random_baseline: f64,
    pub median_dl1_all: Option<i64>,
    pub median_dcount_empty: Option<i64>,
    pub median_dcount_landslide: Option<i64>,
    pub error_bars: ErrorBars,
    pub n_runs: usize,
    /// Panels without chips in their category.
    pub missing_panels: Vec<String>,
    pub chips: Vec<ChipCountError>,
}

fn spread(runs: &[RunMetrics], f: impl Fn(&RunMetrics) -> Option<i64>) -> Option<f64> {
    let v: Vec<f64> = runs.iter().filter_map(|r| f(r).map(|x| x as f64)).collect();
    (!v.is_empty()).then(|| std_of_mean(&v))
}

/// Combine headline (ensemble) metrics with the spread over individual runs.
pub fn aggregate(
    headline: &RunMetrics,
    chips: Vec<ChipCountError>,
    runs: &[RunMetrics],
    baseline: f64,
) -> Result<MetricsReport> {
    if runs.is_empty() {
        return Err(Error::Precondition("aggregate needs at least one run".into()));
    }
    let m = headline.medians;
    let mut missing = Vec::new();
    if m.dcount_empty.is_none() {
        missing.push("dcount_empty".to_string());
    }
    if m.dcount_landslide.is_none() {
        missing.push("dcount_landslide".to_string());
    }
    let aprcs: Vec<f64> = runs.iter().map(|r| r.aprc).collect();
    Ok(MetricsReport {
        aprc: headline.aprc,
        aprc_random_baseline: baseline,
        median_dl1_all: m.dl1_all,
        median_dcount_empty: m.dcount_empty,
        median_dcount_landslide: m.dcount_landslide,
        error_bars: ErrorBars {
            aprc: std_of_mean(&aprcs),
            dl1_all: spread(runs, |r| r.medians.dl1_all),
            dcount_empty: spread(runs, |r| r.medians.dcount_empty),
            dcount_landslide: spread(runs, |r| r.medians.dcount_landslide),
        },
        n_runs: runs.len(),
        missing_panels: missing,
        chips,
    })
}

impl MetricsReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// One row per chip: `chip_id,dl1,dcount,true_positive_pixels`.
    pub fn write_chip_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
        for c in &self.chips {
            w.serialize(c).map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chip(id: &str, mask: Vec<u8>) -> NormalizedChip {
        let n = mask.len();
        let has_landslide = mask.contains(&1);
        NormalizedChip {
            chip_id: id.into(),
            size: 2,
            pre: vec![0.0; 2 * n],
            post: vec![0.0; 2 * n],
            mask,
            has_landslide,
        }
    }

    #[test]
    fn per_run_metrics() {
        let chips = vec![chip("a", vec![1, 1, 0, 0]), chip("b", vec![0; 4])];
        let probs = vec![vec![0.9, 0.8, 0.2, 0.6], vec![0.7, 0.1, 0.1, 0.1]];
        let (run, errs) = evaluate_predictions(&probs, &chips).unwrap();
        assert_eq!(errs[0].dcount, 1);
        assert_eq!(errs[1].dcount, 1);
        assert_eq!(run.medians.dcount_empty, Some(1));
        assert!((run.aprc - 1.0).abs() < 1e-12);
        assert_eq!(pixel_baseline(&chips).unwrap(), 0.25);
    }

    #[test]
    fn aggregation_and_round_trip() {
        let (headline, errs) =
            evaluate_predictions(&[vec![0.9, 0.1, 0.2, 0.1]], &[chip("a", vec![1, 0, 0, 0])]).unwrap();
        let runs: Vec<RunMetrics> = [1.0, 2.0, 3.0].iter().map(|&a| RunMetrics { aprc: a, ..headline }).collect();
        let r = aggregate(&headline, errs, &runs, 0.25).unwrap();
        assert!((r.error_bars.aprc - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.error_bars.dl1_all, Some(0.0));
        assert_eq!(r.missing_panels, ["dcount_empty"]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        r.write_json(&p).unwrap();
        assert_eq!(MetricsReport::read_json(&p).unwrap(), r);
        r.write_chip_csv(&dir.path().join("chips.csv")).unwrap();
        let text = fs::read_to_string(dir.path().join("chips.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), "chip_id,dl1,dcount,true_positive_pixels");
        assert!(aggregate(&headline, vec![], &[], 0.1).is_err());
    }
}
