//! `slidenet`: synthetic data, splits, both training stages, the
//! training-size ablation and its report, from JSON configs plus flags.
//!
//! Errors end the process with one line on stderr,
//! `error[CODE] exit=N: message`, and exit status 2 (configuration),
//! 3 (data) or 4 (training).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const OUT_ENV: &str = "SLIDENET_OUT";

#[derive(Parser, Debug)]
#[command(name = "slidenet", version, about = "Two-stage SAR landslide mapping pipeline")]
pub struct Cli {
    /// Root for default output locations
    #[arg(long, global = true, env = OUT_ENV, default_value = "slidenet-out")]
    pub out_root: PathBuf,

    /// Floating-point precision of the networks
    #[arg(long, global = true, value_enum, default_value_t = Dtype::F32)]
    pub dtype: Dtype,

    /// Log progress (repeat for more detail)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArchPreset {
    Full,
    Ci,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic chip directory
    Synth(SynthArgs),
    /// Assign chips to pretrain/seg_train/validation/test roles
    Split(SplitArgs),
    /// Train the stage-1 chip classifier
    Pretrain(PretrainArgs),
    /// Train the stage-2 segmentation network
    TrainSeg(TrainSegArgs),
    /// Run (or resume) the training-size ablation
    Ablate(AblateArgs),
    /// Evaluate checkpoints as an ensemble on the test split
    Eval(EvalArgs),
    /// Redraw plots and provenance for a finished ablation
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// JSON config; a provenance.json replays its recorded config
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Replace existing outputs
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output chip directory [default: <out-root>/chips]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of chips
    #[arg(long)]
    pub n_chips: Option<usize>,
    /// Random seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Chip edge length in pixels
    #[arg(long)]
    pub chip_size: Option<usize>,
    /// Equivalent number of looks of the speckle
    #[arg(long)]
    pub looks: Option<u32>,
    /// Post/pre backscatter ratio inside landslides
    #[arg(long)]
    pub contrast: Option<f64>,
    /// Fraction of chips containing landslides
    #[arg(long)]
    pub positive_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Chip directory [default: <out-root>/chips]
    #[arg(long)]
    pub chips: Option<PathBuf>,
    /// Manifest CSV to write [default: <out-root>/split.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// pretrain,seg_train,validation,test
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Random seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Subsample the majority class to 50 % positives first
    #[arg(long)]
    pub balance: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Chip directory [default: <out-root>/chips]
    #[arg(long)]
    pub chips: Option<PathBuf>,
    /// Split manifest [default: <out-root>/split.csv]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Network size preset (overrides the config's arch)
    #[arg(long, value_enum)]
    pub arch: Option<ArchPreset>,
    /// Chip edge length in pixels
    #[arg(long)]
    pub chip_size: Option<usize>,
    /// Random seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epoch limit
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without validation improvement before stopping
    #[arg(long)]
    pub patience: Option<usize>,
    /// Chips per optimiser step
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam step size
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug)]
pub struct TrainSegArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Stage-1 checkpoint whose frozen embeddings are fused
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    /// Random subset of the seg_train split to train on
    #[arg(long)]
    pub train_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Training-set sizes
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Variants: none, pretrain_A, pretrain_B
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Stage-1 checkpoint for pretrain_A
    #[arg(long)]
    pub pretrained_a: Option<PathBuf>,
    /// Stage-1 checkpoint for pretrain_B
    #[arg(long)]
    pub pretrained_b: Option<PathBuf>,
    /// Cells trained concurrently
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Chip directory [default: <out-root>/chips]
    #[arg(long)]
    pub chips: Option<PathBuf>,
    /// Split manifest [default: <out-root>/split.csv]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Checkpoint files or directories holding checkpoint_*.bin
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Option<Vec<PathBuf>>,
    /// Stage-1 checkpoint used by the stage-2 checkpoints
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    /// Further manifests audited for leakage into the test split
    #[arg(long, value_delimiter = ',')]
    pub audit: Option<Vec<PathBuf>>,
    /// Output directory [default: <out-root>/eval]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    /// Ablation output directory [default: <out-root>/ablation]
    #[arg(long)]
    pub run: Option<PathBuf>,
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error[E_USAGE] exit=2: {}", one_line(first));
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("error[{}] exit={code}: {}", e.code(), one_line(&e.to_string()));
            ExitCode::from(code as u8)
        }
    }
}
