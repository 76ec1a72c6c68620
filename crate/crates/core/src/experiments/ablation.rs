//! The ablation grid: train, checkpoint and evaluate every
//! `(variant, size, seed)` cell, then reduce cells to table rows.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chipstore::{normalize_chipset, read_chipset, ChipSet, NormalizedChip, Role, SplitManifest};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, pixel_baseline, EmbeddingProvider, MetricsReport, RunMetrics};
use crate::nets::Stage1Params;
use crate::scalar::Scalar;
use crate::trainer::{train_stage2, Checkpoint, Hyperparams};

use super::config::{ExperimentConfig, Variant};
use super::report::{emit_report, Provenance};
use super::results::{CellFailure, ResultsRow, ResultsTable, SeedRecord};
use super::suite::{evaluate_suite, LeakageAudit};

pub const DONE_MARKER: &str = "done.marker";
pub const CELL_METRICS: &str = "metrics.json";
pub const GROUP_REPORT: &str = "report.json";
pub const NORM_STATS: &str = "norm_stats.json";

/// Indices of `n` of `len` items drawn uniformly without replacement,
/// returned in ascending order.
pub fn subsample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 || n > len {
        return Err(Error::Precondition(format!("cannot draw {n} training chips from a split of {len}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, len, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// `n` chips of `split`, uniformly without replacement, in split order.
pub fn subsample_training_set(split: &ChipSet, n: usize, seed: u64) -> Result<ChipSet> {
    let idx = subsample_indices(split.len(), n, seed)?;
    ChipSet::new(idx.into_iter().map(|i| split.chips()[i].clone()).collect(), split.provenance.clone())
}

pub fn cell_dir(out: &Path, variant: Variant, size: usize, seed: u64) -> PathBuf {
    out.join(variant.as_str()).join(size.to_string()).join(seed.to_string())
}

pub fn checkpoint_name(rank: usize) -> String {
    format!("checkpoint_{rank:02}.bin")
}

/// Per-cell record written next to the checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub variant: Variant,
    pub train_size: usize,
    pub seed: u64,
    pub train_chip_ids: Vec<String>,
    pub n_checkpoints: usize,
    pub per_checkpoint: Vec<RunMetrics>,
    /// Metrics of the ensemble of this seed's checkpoints.
    pub seed_ensemble: RunMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GroupReport {
    seeds: Vec<u64>,
    report: MetricsReport,
}

/// Normalised splits and the audit every evaluation must pass.
pub struct AblationInputs {
    pub seg_train: Vec<NormalizedChip>,
    pub val: Vec<NormalizedChip>,
    pub test: Vec<NormalizedChip>,
    pub audit: LeakageAudit,
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Read chips and manifest, normalise with statistics of the segmentation
/// training split, and build the leakage audit.
pub fn load_inputs(config: &ExperimentConfig) -> Result<AblationInputs> {
    let set = read_chipset(&config.chips_dir)?;
    let manifest = SplitManifest::read(&config.manifest)?;
    let seg = manifest.select(&set, Role::SegTrain)?;
    let val = manifest.select(&set, Role::Validation)?;
    let test = manifest.select(&set, Role::Test)?;
    let largest = config.train_sizes.iter().copied().max().unwrap_or(0);
    if largest > seg.len() {
        return Err(Error::Config(format!(
            "train size {largest} exceeds the segmentation training split ({} chips)",
            seg.len()
        )));
    }
    let (seg_train, stats) = normalize_chipset(&seg, None)?;
    let (val, _) = normalize_chipset(&val, Some(&stats))?;
    let (test, _) = normalize_chipset(&test, Some(&stats))?;
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    write_json(&config.output_dir.join(NORM_STATS), &stats)?;
    let mut audit = LeakageAudit::new();
    audit.add_manifest(&config.manifest.display().to_string(), &manifest);
    for path in &config.audit_manifests {
        audit.add_manifest(&path.display().to_string(), &SplitManifest::read(path)?);
    }
    Ok(AblationInputs { seg_train, val, test, audit })
}

fn load_pretrained<T: Scalar>(config: &ExperimentConfig) -> Result<BTreeMap<Variant, Checkpoint<T>>> {
    let mut out = BTreeMap::new();
    for v in config.variants.iter().filter(|v| v.uses_pretrained()) {
        let path = &config.pretrained[v];
        let cp = Checkpoint::<T>::load_stage(path, 1)?;
        if cp.arch() != &config.arch {
            return Err(Error::Config(format!("{} was trained with a different architecture", path.display())));
        }
        out.insert(*v, cp);
    }
    Ok(out)
}

fn provider<T: Scalar>(s1: Option<&Checkpoint<T>>) -> Result<Option<&dyn EmbeddingProvider<T>>> {
    Ok(match s1 {
        Some(cp) => Some(cp.stage1()? as &Stage1Params<T> as &dyn EmbeddingProvider<T>),
        None => None,
    })
}

struct CellOutcome {
    metrics: CellMetrics,
    skipped: bool,
}

#[allow(clippy::too_many_arguments)]
fn run_cell<T: Scalar>(
    config: &ExperimentConfig,
    inputs: &AblationInputs,
    pretrained: Option<&Checkpoint<T>>,
    variant: Variant,
    size: usize,
    seed: u64,
) -> Result<CellOutcome> {
    let dir = cell_dir(&config.output_dir, variant, size, seed);
    if dir.join(DONE_MARKER).exists() {
        return Ok(CellOutcome { metrics: read_json(&dir.join(CELL_METRICS))?, skipped: true });
    }
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let idx = subsample_indices(inputs.seg_train.len(), size, seed)?;
    let train: Vec<NormalizedChip> = idx.iter().map(|&i| inputs.seg_train[i].clone()).collect();
    let hyper = Hyperparams { seed, ..config.hyper.clone() };
    let run = train_stage2(&train, &inputs.val, pretrained, &config.arch, &hyper)?;
    for (rank, cp) in run.checkpoints.iter().enumerate() {
        cp.save(&dir.join(checkpoint_name(rank)))?;
    }
    run.log.write(&dir.join("train_log.json"))?;
    let train_ids: Vec<String> = train.iter().map(|c| c.chip_id.clone()).collect();
    let mut audit = inputs.audit.clone();
    audit.add(format!("training subset {variant}/{size}/{seed}"), train_ids.iter().cloned());
    let suite = evaluate_suite(&run.checkpoints, &inputs.test, provider(pretrained)?, &audit, hyper.batch_size)?;
    let metrics = CellMetrics {
        variant,
        train_size: size,
        seed,
        train_chip_ids: train_ids,
        n_checkpoints: run.checkpoints.len(),
        per_checkpoint: suite.runs,
        seed_ensemble: suite.ensemble,
    };
    write_json(&dir.join(CELL_METRICS), &metrics)?;
    fs::write(dir.join(DONE_MARKER), b"").map_err(|e| Error::io(dir.join(DONE_MARKER), e))?;
    Ok(CellOutcome { metrics, skipped: false })
}

fn checkpoints_in<T: Scalar>(dir: &Path) -> Result<Vec<Checkpoint<T>>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "bin")
                && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("checkpoint_"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| Checkpoint::load_stage(p, 2)).collect()
}

/// Count of checkpoint payloads under a cell directory.
pub fn checkpoint_inventory(dir: &Path) -> Result<usize> {
    Ok(fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| {
            let n = e.file_name().to_string_lossy().to_string();
            n.starts_with("checkpoint_") && n.ends_with(".bin")
        })
        .count())
}

/// Reduce the finished seeds of one `(variant, size)` group to a report:
/// ensemble over every checkpoint of every seed, spread over checkpoints.
fn group_report<T: Scalar>(
    config: &ExperimentConfig,
    inputs: &AblationInputs,
    pretrained: Option<&Checkpoint<T>>,
    cells: &[&CellOutcome],
) -> Result<MetricsReport> {
    let first = &cells[0].metrics;
    let group = config.output_dir.join(first.variant.as_str()).join(first.train_size.to_string());
    let seeds: Vec<u64> = cells.iter().map(|c| c.metrics.seed).collect();
    let cached = group.join(GROUP_REPORT);
    if cells.iter().all(|c| c.skipped) && cached.exists() {
        let g: GroupReport = read_json(&cached)?;
        if g.seeds == seeds {
            return Ok(g.report);
        }
    }
    let mut checkpoints = Vec::new();
    let mut audit = inputs.audit.clone();
    for c in cells {
        let m = &c.metrics;
        checkpoints.extend(checkpoints_in::<T>(&cell_dir(&config.output_dir, m.variant, m.train_size, m.seed))?);
        audit.add(
            format!("training subset {}/{}/{}", m.variant, m.train_size, m.seed),
            m.train_chip_ids.iter().cloned(),
        );
    }
    let suite = evaluate_suite(&checkpoints, &inputs.test, provider(pretrained)?, &audit, config.hyper.batch_size)?;
    let report = aggregate(&suite.ensemble, suite.chip_errors, &suite.runs, pixel_baseline(&inputs.test)?)?;
    write_json(&cached, &GroupReport { seeds, report: report.clone() })?;
    report.write_chip_csv(&group.join("chip_errors.csv"))?;
    Ok(report)
}

/// Run (or resume) the whole grid, write the table and the report.
/// A failing cell is recorded in the table and does not stop the others.
pub fn run_ablation<T: Scalar>(config: &ExperimentConfig) -> Result<ResultsTable> {
    config.validate()?;
    let inputs = load_inputs(config)?;
    let pretrained = load_pretrained::<T>(config)?;
    let cells: Vec<(Variant, usize, u64)> = config
        .variants
        .iter()
        .flat_map(|&v| {
            config.train_sizes.iter().flat_map(move |&s| config.seeds_for(s).into_iter().map(move |seed| (v, s, seed)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<CellOutcome>> = pool.install(|| {
        cells.par_iter().map(|&(v, s, seed)| run_cell(config, &inputs, pretrained.get(&v), v, s, seed)).collect()
    });

    let mut table = ResultsTable::default();
    for &variant in &config.variants {
        for &size in &config.train_sizes {
            let mut done = Vec::new();
            for (&(v, s, seed), outcome) in cells.iter().zip(&outcomes) {
                if v != variant || s != size {
                    continue;
                }
                match outcome {
                    Ok(o) => done.push(o),
                    Err(e) => {
                        log::warn!("cell {v}/{s}/{seed} failed: {e}");
                        table.failures.push(CellFailure { variant, train_size: size, seed, error: e.to_string() });
                    }
                }
            }
            for o in &done {
                let m = &o.metrics;
                table.seeds.push(SeedRecord::new(variant, size, m.seed, m.n_checkpoints, &m.seed_ensemble));
            }
            if done.is_empty() {
                continue;
            }
            let report = group_report(config, &inputs, pretrained.get(&variant), &done)?;
            table.rows.push(ResultsRow::from_report(variant, size, &report, done.len()));
        }
    }
    emit_report(&table, &Provenance::from_config(config)?, &config.output_dir)?;
    Ok(table)
}
