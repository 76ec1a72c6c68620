use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use slidenet::chipstore::{
    balance_chipset, generate_synthetic_chipset, normalize_chipset, read_chipset, split_chipset, write_chipset,
    NormalizedChip, Role, SplitManifest, SyntheticConfig,
};
use slidenet::experiments::{
    emit_report, evaluate_suite, run_ablation, subsample_indices, ExperimentConfig, LeakageAudit, Provenance,
    ResultsTable, PROVENANCE_JSON,
};
use slidenet::metrics::{aggregate, pixel_baseline, EmbeddingProvider};
use slidenet::nets::ArchConfig;
use slidenet::trainer::{train_stage1, train_stage2, Checkpoint, Hyperparams, TrainRun};
use slidenet::{Error, Result, Scalar};

use crate::config::{resolve, Overrides};
use crate::{ArchPreset, Cli, Command, Dtype, TrainArgs};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthConfig {
    synthetic: SyntheticConfig,
    output_dir: PathBuf,
}

fn default_fractions() -> [f64; 4] {
    [0.5, 0.25, 0.125, 0.125]
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitConfig {
    chips_dir: PathBuf,
    manifest: PathBuf,
    #[serde(default = "default_fractions")]
    fractions: [f64; 4],
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    balance: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfig {
    chips_dir: PathBuf,
    manifest: PathBuf,
    output_dir: PathBuf,
    #[serde(default = "ArchConfig::full")]
    arch: ArchConfig,
    #[serde(default)]
    hyper: Hyperparams,
    /// Stage 2 only.
    #[serde(default)]
    pretrained: Option<PathBuf>,
    /// Stage 2 only: random subset of seg_train.
    #[serde(default)]
    train_size: Option<usize>,
}

fn default_batch() -> usize {
    16
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    chips_dir: PathBuf,
    manifest: PathBuf,
    checkpoints: Vec<PathBuf>,
    #[serde(default)]
    pretrained: Option<PathBuf>,
    #[serde(default)]
    audit_manifests: Vec<PathBuf>,
    #[serde(default = "default_batch")]
    batch_size: usize,
    output_dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportConfig {
    run_dir: PathBuf,
}

fn path(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

fn io(p: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Data(format!("{}: {e}", p.display()))
}

/// Make `dir` an empty directory; existing content needs `force`.
fn fresh_dir(dir: &Path, force: bool) -> Result<()> {
    let occupied = dir.exists() && fs::read_dir(dir).map_err(io(dir))?.next().is_some();
    if occupied {
        if !force {
            return Err(Error::Config(format!("{} is not empty; pass --force to replace it", dir.display())));
        }
        fs::remove_dir_all(dir).map_err(io(dir))?;
    }
    fs::create_dir_all(dir).map_err(io(dir))
}

fn write_provenance(dir: &Path, config: Value, seeds: BTreeMap<usize, Vec<u64>>) -> Result<()> {
    Provenance::new(config, seeds)?.write(&dir.join(PROVENANCE_JSON))
}

macro_rules! dispatch {
    ($dtype:expr, $f:ident($($arg:expr),*)) => {
        match $dtype {
            Dtype::F32 => $f::<f32>($($arg),*),
            Dtype::F64 => $f::<f64>($($arg),*),
        }
    };
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Split(a) => split(cli, a),
        Command::Pretrain(a) => {
            let mut o = Overrides::default();
            o.set("hyper.seed", a.train.seed);
            let (cfg, value) = train_config(cli, &a.train, o, a.common.config.as_deref(), "pretrain")?;
            dispatch!(cli.dtype, pretrain(&cfg, value, a.common.force))
        }
        Command::TrainSeg(a) => {
            let mut o = Overrides::default();
            o.set("hyper.seed", a.train.seed)
                .set("pretrained", a.pretrained.as_deref().map(path))
                .set("train_size", a.train_size);
            let (cfg, value) = train_config(cli, &a.train, o, a.common.config.as_deref(), "train-seg")?;
            dispatch!(cli.dtype, train_seg(&cfg, value, a.common.force))
        }
        Command::Ablate(a) => ablate(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Report(a) => report(cli, a),
    }
}

fn synth(cli: &Cli, a: &crate::SynthArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.set("output_dir", a.out.as_deref().map(path))
        .set("synthetic.n_chips", a.n_chips)
        .set("synthetic.seed", a.seed)
        .set("synthetic.chip_size", a.chip_size)
        .set("synthetic.looks", a.looks)
        .set("synthetic.contrast", a.contrast)
        .set("synthetic.positive_fraction", a.positive_fraction);
    let defaults = [("output_dir", path(&cli.out_root.join("chips")))];
    let (cfg, value): (SynthConfig, _) = resolve(a.common.config.as_deref(), &defaults, &o)?;
    cfg.synthetic.validate()?;
    let set = generate_synthetic_chipset(&cfg.synthetic)?;
    fresh_dir(&cfg.output_dir, a.common.force)?;
    write_chipset(&set, &cfg.output_dir, Some(serde_json::to_value(&cfg.synthetic)?))?;
    write_provenance(&cfg.output_dir, value, BTreeMap::new())?;
    log::info!("wrote {} chips ({} with landslides) to {}", set.len(), set.positives(), cfg.output_dir.display());
    Ok(())
}

fn split(cli: &Cli, a: &crate::SplitArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.set("chips_dir", a.chips.as_deref().map(path))
        .set("manifest", a.out.as_deref().map(path))
        .set("fractions", a.fractions.clone())
        .set("seed", a.seed)
        .set("balance", a.balance.then_some(true));
    let defaults =
        [("chips_dir", path(&cli.out_root.join("chips"))), ("manifest", path(&cli.out_root.join("split.csv")))];
    let (cfg, value): (SplitConfig, _) = resolve(a.common.config.as_deref(), &defaults, &o)?;
    let mut set = read_chipset(&cfg.chips_dir)?;
    if cfg.balance {
        set = balance_chipset(&set, 0.5, cfg.seed)?;
    } else if (2 * set.positives()).abs_diff(set.len()) > 1 {
        return Err(Error::Data(format!(
            "{} of {} chips contain landslides; pass --balance to subsample to 50 %",
            set.positives(),
            set.len()
        )));
    }
    let manifest = split_chipset(&set, cfg.fractions, cfg.seed)?;
    let footer = slidenet::chipstore::footer_path(&cfg.manifest);
    let prov = cfg.manifest.with_extension("provenance.json");
    for p in [&cfg.manifest, &footer, &prov] {
        if p.exists() {
            if !a.common.force {
                return Err(Error::Config(format!("{} exists; pass --force to replace it", p.display())));
            }
            fs::remove_file(p).map_err(io(p))?;
        }
    }
    if let Some(parent) = cfg.manifest.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    manifest.write(&cfg.manifest)?;
    Provenance::new(value, BTreeMap::new())?.write(&prov)?;
    log::info!("split counts {:?}", manifest.counts());
    Ok(())
}

fn train_config(
    cli: &Cli,
    t: &TrainArgs,
    mut o: Overrides,
    file: Option<&Path>,
    default_dir: &str,
) -> Result<(TrainConfig, Value)> {
    train_overrides(t, &mut o)?;
    o.set("output_dir", t.out.as_deref().map(path));
    let defaults = [
        ("chips_dir", path(&cli.out_root.join("chips"))),
        ("manifest", path(&cli.out_root.join("split.csv"))),
        ("output_dir", path(&cli.out_root.join(default_dir))),
    ];
    let (cfg, value): (TrainConfig, Value) = resolve(file, &defaults, &o)?;
    if default_dir == "pretrain" && (cfg.pretrained.is_some() || cfg.train_size.is_some()) {
        return Err(Error::Config("pretrained and train_size apply to train-seg only".into()));
    }
    Ok((cfg, value))
}

fn train_overrides(t: &TrainArgs, o: &mut Overrides) -> Result<()> {
    if let Some(p) = t.arch {
        let arch = match p {
            ArchPreset::Full => ArchConfig::full(),
            ArchPreset::Ci => ArchConfig::ci(),
        };
        o.set("arch", Some(serde_json::to_value(arch)?));
    }
    o.set("chips_dir", t.chips.as_deref().map(path))
        .set("manifest", t.manifest.as_deref().map(path))
        .set("arch.chip_size", t.chip_size)
        .set("hyper.max_epochs", t.max_epochs)
        .set("hyper.patience_epochs", t.patience)
        .set("hyper.batch_size", t.batch_size)
        .set("hyper.learning_rate", t.learning_rate);
    Ok(())
}

/// Train, validation and test chips plus the normalisation statistics.
type Splits = (Vec<NormalizedChip>, Vec<NormalizedChip>, Vec<NormalizedChip>, Value);

/// Normalised `train`, validation and test splits, using statistics of `train`.
fn load_splits(chips: &Path, manifest: &Path, train: Role) -> Result<Splits> {
    let set = read_chipset(chips)?;
    let m = SplitManifest::read(manifest)?;
    let (tr, stats) = normalize_chipset(&m.select(&set, train)?, None)?;
    let (val, _) = normalize_chipset(&m.select(&set, Role::Validation)?, Some(&stats))?;
    let (test, _) = normalize_chipset(&m.select(&set, Role::Test)?, Some(&stats))?;
    Ok((tr, val, test, serde_json::to_value(&stats)?))
}

fn save_run<T: Scalar>(run: &TrainRun<T>, dir: &Path) -> Result<()> {
    for (i, cp) in run.checkpoints.iter().enumerate() {
        cp.save(&dir.join(format!("checkpoint_{i:02}.bin")))?;
    }
    run.log.write(&dir.join("train_log.json"))
}

fn pretrain<T: Scalar>(cfg: &TrainConfig, value: Value, force: bool) -> Result<()> {
    cfg.hyper.validate()?;
    let (pre, val, _, stats) = load_splits(&cfg.chips_dir, &cfg.manifest, Role::Pretrain)?;
    fresh_dir(&cfg.output_dir, force)?;
    let run = train_stage1::<T>(&pre, &val, &cfg.arch, &cfg.hyper)?;
    save_run(&run, &cfg.output_dir)?;
    fs::write(cfg.output_dir.join("norm_stats.json"), serde_json::to_vec_pretty(&stats)?)
        .map_err(io(&cfg.output_dir))?;
    write_provenance(&cfg.output_dir, value, BTreeMap::from([(pre.len(), vec![cfg.hyper.seed])]))?;
    log::info!("best validation accuracy {:.4}", run.checkpoints[0].val_metric);
    Ok(())
}

fn train_seg<T: Scalar>(cfg: &TrainConfig, value: Value, force: bool) -> Result<()> {
    cfg.hyper.validate()?;
    let (seg, val, _, stats) = load_splits(&cfg.chips_dir, &cfg.manifest, Role::SegTrain)?;
    let train: Vec<NormalizedChip> = match cfg.train_size {
        Some(n) => subsample_indices(seg.len(), n, cfg.hyper.seed)?.into_iter().map(|i| seg[i].clone()).collect(),
        None => seg,
    };
    let pretrained = cfg.pretrained.as_deref().map(|p| Checkpoint::<T>::load_stage(p, 1)).transpose()?;
    fresh_dir(&cfg.output_dir, force)?;
    let run = train_stage2::<T>(&train, &val, pretrained.as_ref(), &cfg.arch, &cfg.hyper)?;
    save_run(&run, &cfg.output_dir)?;
    fs::write(cfg.output_dir.join("norm_stats.json"), serde_json::to_vec_pretty(&stats)?)
        .map_err(io(&cfg.output_dir))?;
    let ids: Vec<&str> = train.iter().map(|c| c.chip_id.as_str()).collect();
    fs::write(cfg.output_dir.join("train_chips.json"), serde_json::to_vec_pretty(&ids)?)
        .map_err(io(&cfg.output_dir))?;
    write_provenance(&cfg.output_dir, value, BTreeMap::from([(train.len(), vec![cfg.hyper.seed])]))?;
    log::info!("best validation APRC {:.4}", run.checkpoints[0].val_metric);
    Ok(())
}

fn ablate(cli: &Cli, a: &crate::AblateArgs) -> Result<()> {
    let mut o = Overrides::default();
    train_overrides(&a.train, &mut o)?;
    o.set("base_seed", a.train.seed)
        .set("output_dir", a.train.out.as_deref().map(path))
        .set("train_sizes", a.sizes.clone())
        .set("variants", a.variants.clone())
        .set("pretrained.pretrain_A", a.pretrained_a.as_deref().map(path))
        .set("pretrained.pretrain_B", a.pretrained_b.as_deref().map(path))
        .set("jobs", a.jobs);
    let defaults = [
        ("chips_dir", path(&cli.out_root.join("chips"))),
        ("manifest", path(&cli.out_root.join("split.csv"))),
        ("output_dir", path(&cli.out_root.join("ablation"))),
    ];
    let (cfg, _): (ExperimentConfig, _) = resolve(a.common.config.as_deref(), &defaults, &o)?;
    cfg.validate()?;
    if a.common.force && cfg.output_dir.exists() {
        fs::remove_dir_all(&cfg.output_dir).map_err(io(&cfg.output_dir))?;
    }
    let table = dispatch!(cli.dtype, run_ablation(&cfg))?;
    if !table.failures.is_empty() {
        log::warn!("{} cells failed; see failures.csv", table.failures.len());
    }
    if table.rows.is_empty() {
        let first = table.failures.first().map(|f| f.error.clone()).unwrap_or_default();
        return Err(Error::Divergence(format!("every cell failed; first error: {first}")));
    }
    Ok(())
}

fn checkpoint_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(io(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    let n = f.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
                    n.starts_with("checkpoint_") && n.ends_with(".bin")
                })
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no checkpoints given".into()));
    }
    Ok(out)
}

fn eval(cli: &Cli, a: &crate::EvalArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.set("chips_dir", a.chips.as_deref().map(path))
        .set("manifest", a.manifest.as_deref().map(path))
        .set("checkpoints", a.checkpoints.as_ref().map(|v| v.iter().map(|p| path(p)).collect::<Vec<_>>()))
        .set("pretrained", a.pretrained.as_deref().map(path))
        .set("audit_manifests", a.audit.as_ref().map(|v| v.iter().map(|p| path(p)).collect::<Vec<_>>()))
        .set("output_dir", a.out.as_deref().map(path));
    let defaults = [
        ("chips_dir", path(&cli.out_root.join("chips"))),
        ("manifest", path(&cli.out_root.join("split.csv"))),
        ("output_dir", path(&cli.out_root.join("eval"))),
    ];
    let (cfg, value): (EvalConfig, _) = resolve(a.common.config.as_deref(), &defaults, &o)?;
    dispatch!(cli.dtype, evaluate(&cfg, value, a.common.force))
}

fn evaluate<T: Scalar>(cfg: &EvalConfig, value: Value, force: bool) -> Result<()> {
    let files = checkpoint_files(&cfg.checkpoints)?;
    let checkpoints = files.iter().map(|f| Checkpoint::<T>::load_stage(f, 2)).collect::<Result<Vec<_>>>()?;
    let stage1 = cfg.pretrained.as_deref().map(|p| Checkpoint::<T>::load_stage(p, 1)).transpose()?;
    let provider: Option<&dyn EmbeddingProvider<T>> = match &stage1 {
        Some(cp) => Some(cp.stage1()?),
        None => None,
    };
    let (_, _, test, _) = load_splits(&cfg.chips_dir, &cfg.manifest, Role::SegTrain)?;
    let mut audit = LeakageAudit::new();
    audit.add_manifest(&cfg.manifest.display().to_string(), &SplitManifest::read(&cfg.manifest)?);
    for m in &cfg.audit_manifests {
        audit.add_manifest(&m.display().to_string(), &SplitManifest::read(m)?);
    }
    let suite = evaluate_suite(&checkpoints, &test, provider, &audit, cfg.batch_size)?;
    let report = aggregate(&suite.ensemble, suite.chip_errors, &suite.runs, pixel_baseline(&test)?)?;
    fresh_dir(&cfg.output_dir, force)?;
    report.write_json(&cfg.output_dir.join("report.json"))?;
    report.write_chip_csv(&cfg.output_dir.join("chip_errors.csv"))?;
    write_provenance(&cfg.output_dir, value, BTreeMap::new())?;
    println!(
        "{}",
        json!({
            "aprc": report.aprc,
            "aprc_err": report.error_bars.aprc,
            "aprc_random_baseline": report.aprc_random_baseline,
            "median_dl1_all": report.median_dl1_all,
            "median_dcount_empty": report.median_dcount_empty,
            "median_dcount_landslide": report.median_dcount_landslide,
            "n_checkpoints": report.n_runs,
        })
    );
    Ok(())
}

fn report(cli: &Cli, a: &crate::ReportArgs) -> Result<()> {
    let mut o = Overrides::default();
    o.set("run_dir", a.run.as_deref().map(path));
    let defaults = [("run_dir", path(&cli.out_root.join("ablation")))];
    let (cfg, value): (ReportConfig, _) = resolve(a.common.config.as_deref(), &defaults, &o)?;
    let table = ResultsTable::read_csv(&cfg.run_dir)?;
    let prov_path = cfg.run_dir.join(PROVENANCE_JSON);
    let provenance =
        if prov_path.exists() { Provenance::read(&prov_path)? } else { Provenance::new(value, BTreeMap::new())? };
    emit_report(&table, &provenance, &cfg.run_dir)
}
