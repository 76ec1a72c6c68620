//! Test-set evaluation behind a leakage guard.

use std::collections::HashSet;

use crate::chipstore::{NormalizedChip, Role, SplitManifest};
use crate::error::{Error, Result};
use crate::metrics::{
    ensemble_mean, evaluate_predictions, member_predictions, ChipCountError, EmbeddingProvider, RunMetrics,
};
use crate::scalar::Scalar;
use crate::trainer::Checkpoint;

/// Named sets of chip ids that were used for training or selection.
#[derive(Debug, Clone, Default)]
pub struct LeakageAudit {
    sets: Vec<(String, HashSet<String>)>,
}

impl LeakageAudit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, ids: impl IntoIterator<Item = impl Into<String>>) {
        self.sets.push((name.into(), ids.into_iter().map(Into::into).collect()));
    }

    /// Registers every non-test role of `manifest`.
    pub fn add_manifest(&mut self, name: &str, manifest: &SplitManifest) {
        for role in [Role::Pretrain, Role::SegTrain, Role::Validation] {
            self.add(format!("{name} ({role})"), manifest.ids(role).into_iter().map(str::to_string));
        }
    }

    pub fn check<'a>(&self, test_ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for id in test_ids {
            if let Some((name, _)) = self.sets.iter().find(|(_, s)| s.contains(id)) {
                return Err(Error::Leakage { chip_id: id.to_string(), manifest: name.clone() });
            }
        }
        Ok(())
    }
}

/// Everything the report needs from one group of checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutput {
    /// Ensemble-mean probabilities per test chip.
    pub probabilities: Vec<Vec<f64>>,
    pub ensemble: RunMetrics,
    pub chip_errors: Vec<ChipCountError>,
    /// One entry per checkpoint.
    pub runs: Vec<RunMetrics>,
}

/// Evaluate `checkpoints` individually and as an ensemble on the test chips.
pub fn evaluate_suite<T: Scalar>(
    checkpoints: &[Checkpoint<T>],
    test: &[NormalizedChip],
    provider: Option<&dyn EmbeddingProvider<T>>,
    audit: &LeakageAudit,
    batch_size: usize,
) -> Result<SuiteOutput> {
    if test.is_empty() {
        return Err(Error::Precondition("test split is empty".into()));
    }
    audit.check(test.iter().map(|c| c.chip_id.as_str()))?;
    let members = member_predictions(checkpoints, test, provider, batch_size)?;
    let runs = members
        .iter()
        .map(|m| {
            let probs: Vec<Vec<f64>> = m.iter().map(|c| c.iter().map(|v| v.as_f64()).collect()).collect();
            evaluate_predictions(&probs, test).map(|r| r.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let probabilities = ensemble_mean(&members)?;
    let (ensemble, chip_errors) = evaluate_predictions(&probabilities, test)?;
    Ok(SuiteOutput { probabilities, ensemble, chip_errors, runs })
}
