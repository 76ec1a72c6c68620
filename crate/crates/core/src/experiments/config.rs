use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ArchConfig;
use crate::trainer::Hyperparams;

/// Stage-2 model family: no embeddings, or embeddings from one of two
/// pretrained classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "pretrain_A")]
    PretrainA,
    #[serde(rename = "pretrain_B")]
    PretrainB,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::None, Variant::PretrainA, Variant::PretrainB];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::None => "none",
            Variant::PretrainA => "pretrain_A",
            Variant::PretrainB => "pretrain_B",
        }
    }

    pub fn uses_pretrained(self) -> bool {
        self != Variant::None
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

fn default_sizes() -> Vec<usize> {
    vec![2, 5, 10, 20, 110]
}

fn default_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_sizes")]
    pub train_sizes: Vec<usize>,
    /// Overrides of the seed count per size (5 for size 2, 3 otherwise).
    #[serde(default)]
    pub seeds_per_size: BTreeMap<usize, usize>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub hyper: Hyperparams,
    #[serde(default = "ArchConfig::full")]
    pub arch: ArchConfig,
    /// Segmentation chip directory and its split manifest.
    pub chips_dir: PathBuf,
    pub manifest: PathBuf,
    /// Stage-1 checkpoint per pretrained variant.
    #[serde(default)]
    pub pretrained: BTreeMap<Variant, PathBuf>,
    /// Further manifests whose non-test chips must never be test chips here.
    #[serde(default)]
    pub audit_manifests: Vec<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

impl ExperimentConfig {
    pub fn new(chips_dir: PathBuf, manifest: PathBuf, output_dir: PathBuf) -> Self {
        Self {
            train_sizes: default_sizes(),
            seeds_per_size: BTreeMap::new(),
            variants: default_variants(),
            base_seed: 0,
            hyper: Hyperparams::default(),
            arch: ArchConfig::full(),
            chips_dir,
            manifest,
            pretrained: BTreeMap::new(),
            audit_manifests: Vec::new(),
            output_dir,
            jobs: 1,
        }
    }

    pub fn seed_count(&self, size: usize) -> usize {
        self.seeds_per_size.get(&size).copied().unwrap_or(if size == 2 { 5 } else { 3 })
    }

    /// Training seeds of one size: `base_seed` plus a running index over
    /// the configured sizes. Shared by every variant.
    pub fn seeds_for(&self, size: usize) -> Vec<u64> {
        let mut offset = 0u64;
        for &s in &self.train_sizes {
            let n = self.seed_count(s) as u64;
            if s == size {
                return (0..n).map(|i| self.base_seed + offset + i).collect();
            }
            offset += n;
        }
        Vec::new()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.train_sizes.is_empty() || self.train_sizes.contains(&0) {
            return bad(format!("train_sizes {:?} must be nonempty and positive", self.train_sizes));
        }
        let mut sizes = self.train_sizes.clone();
        sizes.sort_unstable();
        sizes.dedup();
        if sizes.len() != self.train_sizes.len() {
            return bad("train_sizes contains duplicates".into());
        }
        if self.train_sizes.iter().any(|&s| self.seed_count(s) == 0) {
            return bad("every size needs at least one seed".into());
        }
        if self.variants.is_empty() {
            return bad("no variants selected".into());
        }
        let mut v = self.variants.clone();
        v.sort();
        v.dedup();
        if v.len() != self.variants.len() {
            return bad("variants contains duplicates".into());
        }
        for var in &self.variants {
            if var.uses_pretrained() && !self.pretrained.contains_key(var) {
                return bad(format!("variant {var} needs a pretrained checkpoint"));
            }
        }
        if self.jobs == 0 {
            return bad("jobs must be >= 1".into());
        }
        self.hyper.validate()?;
        self.arch.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ExperimentConfig {
        ExperimentConfig::new("c".into(), "m.csv".into(), "out".into())
    }

    #[test]
    fn default_protocol() {
        let c = cfg();
        let counts: Vec<usize> = c.train_sizes.iter().map(|&s| c.seed_count(s)).collect();
        assert_eq!(counts, [5, 3, 3, 3, 3]);
        assert_eq!(c.seeds_for(2), [0, 1, 2, 3, 4]);
        assert_eq!(c.seeds_for(5), [5, 6, 7]);
        assert_eq!(c.seeds_for(110), [14, 15, 16]);
        assert!(c.seeds_for(7).is_empty());
    }

    #[test]
    fn seed_lists_are_disjoint() {
        let c = ExperimentConfig { base_seed: 100, ..cfg() };
        let mut all: Vec<u64> = c.train_sizes.iter().flat_map(|&s| c.seeds_for(s)).collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
    }

    #[test]
    fn validation() {
        assert!(cfg().validate().is_err());
        let mut c = ExperimentConfig { variants: vec![Variant::None], ..cfg() };
        c.validate().unwrap();
        c.train_sizes = vec![2, 2];
        assert!(c.validate().is_err());
        let json = r#"{"chips_dir": "a", "manifest": "b", "output_dir": "c", "variants": ["none", "pretrain_A"],
            "pretrained": {"pretrain_A": "x.bin"}, "seeds_per_size": {"2": 1}}"#;
        let c: ExperimentConfig = serde_json::from_str(json).unwrap();
        c.validate().unwrap();
        assert_eq!(c.seed_count(2), 1);
        assert!(serde_json::from_str::<ExperimentConfig>(
            r#"{"chips_dir": "a", "manifest": "b", "output_dir": "c", "oops": 1}"#
        )
        .is_err());
        assert_eq!("pretrain_B".parse::<Variant>().unwrap(), Variant::PretrainB);
        assert!("B".parse::<Variant>().is_err());
    }
}
