use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, RunMetrics};

use super::config::Variant;

/// One `(variant, train_size)` cell of the ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub variant: Variant,
    pub train_size: usize,
    pub aprc: f64,
    pub aprc_err: f64,
    pub aprc_random_baseline: f64,
    pub median_dl1_all: Option<i64>,
    pub dl1_all_err: Option<f64>,
    pub median_dcount_empty: Option<i64>,
    pub dcount_empty_err: Option<f64>,
    pub median_dcount_landslide: Option<i64>,
    pub dcount_landslide_err: Option<f64>,
    pub n_seeds: usize,
    pub n_checkpoints: usize,
}

impl ResultsRow {
    pub fn from_report(variant: Variant, train_size: usize, r: &MetricsReport, n_seeds: usize) -> Self {
        Self {
            variant,
            train_size,
            aprc: r.aprc,
            aprc_err: r.error_bars.aprc,
            aprc_random_baseline: r.aprc_random_baseline,
            median_dl1_all: r.median_dl1_all,
            dl1_all_err: r.error_bars.dl1_all,
            median_dcount_empty: r.median_dcount_empty,
            dcount_empty_err: r.error_bars.dcount_empty,
            median_dcount_landslide: r.median_dcount_landslide,
            dcount_landslide_err: r.error_bars.dcount_landslide,
            n_seeds,
            n_checkpoints: r.n_runs,
        }
    }
}

/// Metrics of one seed's own checkpoint ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub variant: Variant,
    pub train_size: usize,
    pub seed: u64,
    pub n_checkpoints: usize,
    pub aprc: f64,
    pub median_dl1_all: Option<i64>,
    pub median_dcount_empty: Option<i64>,
    pub median_dcount_landslide: Option<i64>,
}

impl SeedRecord {
    pub fn new(variant: Variant, train_size: usize, seed: u64, n_checkpoints: usize, m: &RunMetrics) -> Self {
        Self {
            variant,
            train_size,
            seed,
            n_checkpoints,
            aprc: m.aprc,
            median_dl1_all: m.medians.dl1_all,
            median_dcount_empty: m.medians.dcount_empty,
            median_dcount_landslide: m.medians.dcount_landslide,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub variant: Variant,
    pub train_size: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub rows: Vec<ResultsRow>,
    pub seeds: Vec<SeedRecord>,
    pub failures: Vec<CellFailure>,
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| Error::format(path.display().to_string(), e.to_string()))).collect()
}

pub const RESULTS_CSV: &str = "results.csv";
pub const SEEDS_CSV: &str = "seeds.csv";
pub const FAILURES_CSV: &str = "failures.csv";

impl ResultsTable {
    pub fn row(&self, variant: Variant, train_size: usize) -> Option<&ResultsRow> {
        self.rows.iter().find(|r| r.variant == variant && r.train_size == train_size)
    }

    pub fn seeds_of(&self, variant: Variant, train_size: usize) -> Vec<&SeedRecord> {
        self.seeds.iter().filter(|s| s.variant == variant && s.train_size == train_size).collect()
    }

    /// `results.csv`, `seeds.csv` and, when any cell failed, `failures.csv`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        write_csv(&dir.join(RESULTS_CSV), &self.rows)?;
        write_csv(&dir.join(SEEDS_CSV), &self.seeds)?;
        let failures = dir.join(FAILURES_CSV);
        if self.failures.is_empty() {
            if failures.exists() {
                std::fs::remove_file(&failures).map_err(|e| Error::io(&failures, e))?;
            }
            Ok(())
        } else {
            write_csv(&failures, &self.failures)
        }
    }

    pub fn read_csv(dir: &Path) -> Result<Self> {
        let failures = dir.join(FAILURES_CSV);
        Ok(Self {
            rows: read_csv(&dir.join(RESULTS_CSV))?,
            seeds: read_csv(&dir.join(SEEDS_CSV))?,
            failures: if failures.exists() { read_csv(&failures)? } else { Vec::new() },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let row = ResultsRow {
            variant: Variant::PretrainA,
            train_size: 5,
            aprc: 0.1 + 0.2,
            aprc_err: 1.0 / 3.0,
            aprc_random_baseline: 0.032,
            median_dl1_all: Some(12),
            dl1_all_err: Some(0.5773502691896258),
            median_dcount_empty: None,
            dcount_empty_err: None,
            median_dcount_landslide: Some(-40),
            dcount_landslide_err: Some(2e-17),
            n_seeds: 3,
            n_checkpoints: 15,
        };
        let table = ResultsTable {
            rows: vec![row.clone(), ResultsRow { variant: Variant::None, ..row }],
            seeds: vec![SeedRecord {
                variant: Variant::None,
                train_size: 5,
                seed: 7,
                n_checkpoints: 5,
                aprc: 0.123456789012345,
                median_dl1_all: Some(0),
                median_dcount_empty: Some(-1),
                median_dcount_landslide: None,
            }],
            failures: vec![CellFailure { variant: Variant::None, train_size: 5, seed: 8, error: "x, y".into() }],
        };
        let dir = tempfile::tempdir().unwrap();
        table.write_csv(dir.path()).unwrap();
        assert_eq!(ResultsTable::read_csv(dir.path()).unwrap(), table);
        let header = std::fs::read_to_string(dir.path().join(RESULTS_CSV)).unwrap();
        assert!(header.starts_with("variant,train_size,aprc,aprc_err"));
        assert!(header.contains("pretrain_A,5,"));
    }
}
