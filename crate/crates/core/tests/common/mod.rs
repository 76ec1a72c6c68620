#![allow(dead_code)]

use std::path::{Path, PathBuf};

use slidenet::chipstore::{generate_synthetic_chipset, split_chipset, write_chipset, SyntheticConfig};
use slidenet::nets::ArchConfig;
use slidenet::trainer::Hyperparams;

/// A synthetic chip directory and its manifest on disk.
pub struct Workspace {
    pub chips: PathBuf,
    pub manifest: PathBuf,
}

pub fn synthetic(n: usize, seed: u64, chip_size: usize, radius: (u32, u32)) -> SyntheticConfig {
    SyntheticConfig {
        chip_size,
        blob_radius_range_px: radius,
        blob_count_range: (1, 2),
        ..SyntheticConfig::new(n, seed)
    }
}

pub fn write_workspace(root: &Path, name: &str, cfg: &SyntheticConfig, fractions: [f64; 4]) -> Workspace {
    let set = generate_synthetic_chipset(cfg).unwrap();
    let chips = root.join(name);
    write_chipset(&set, &chips, Some(serde_json::to_value(cfg).unwrap())).unwrap();
    let manifest = root.join(format!("{name}_split.csv"));
    split_chipset(&set, fractions, cfg.seed).unwrap().write(&manifest).unwrap();
    Workspace { chips, manifest }
}

pub fn ci_arch(chip_size: usize) -> ArchConfig {
    ArchConfig::ci().with_chip_size(chip_size)
}

pub fn quick_hyper(max_epochs: usize) -> Hyperparams {
    Hyperparams {
        learning_rate: 3e-3,
        batch_size: 8,
        max_epochs,
        patience_epochs: max_epochs,
        ..Hyperparams::default()
    }
}
