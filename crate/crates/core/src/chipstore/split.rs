//! Class balancing and deterministic role assignment.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chip::ChipSet;
use super::format::write_new;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Pretrain,
    SegTrain,
    Validation,
    Test,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Pretrain, Role::SegTrain, Role::Validation, Role::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Pretrain => "pretrain",
            Role::SegTrain => "seg_train",
            Role::Validation => "validation",
            Role::Test => "test",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::format("role", format!("unknown role {s:?}")))
    }
}

/// Hamilton apportionment of `total` items over `weights` (which sum to 1).
/// Leftover units go to the largest fractional remainders, ties to the lower index.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Randomly discard chips from the over-represented class until the positive
/// fraction is `target_fraction` (to the nearest chip). Survivors keep order.
pub fn balance_chipset(set: &ChipSet, target_fraction: f64, seed: u64) -> Result<ChipSet> {
    if !(0.0..=1.0).contains(&target_fraction) {
        return Err(Error::Config(format!("target fraction {target_fraction} outside [0, 1]")));
    }
    let pos: Vec<usize> = (0..set.len()).filter(|&i| set.chips()[i].has_landslide()).collect();
    let neg: Vec<usize> = (0..set.len()).filter(|&i| !set.chips()[i].has_landslide()).collect();
    if target_fraction > 0.0 && pos.is_empty() {
        return Err(Error::Precondition("balancing needs at least one positive chip".into()));
    }
    if target_fraction < 1.0 && neg.is_empty() {
        return Err(Error::Precondition("balancing needs at least one negative chip".into()));
    }
    let (p, n) = (pos.len() as f64, neg.len() as f64);
    let current = p / (p + n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep: Vec<usize> = if current > target_fraction {
        // keep all negatives, positives = t n / (1 - t)
        let want = (target_fraction * n / (1.0 - target_fraction)).round() as usize;
        let mut kept = pos.clone();
        kept.shuffle(&mut rng);
        kept.truncate(want.min(pos.len()));
        kept.into_iter().chain(neg.iter().copied()).collect()
    } else if current < target_fraction {
        let want = ((1.0 - target_fraction) * p / target_fraction).round() as usize;
        let mut kept = neg.clone();
        kept.shuffle(&mut rng);
        kept.truncate(want.min(neg.len()));
        kept.into_iter().chain(pos.iter().copied()).collect()
    } else {
        (0..set.len()).collect()
    };
    let mut keep = keep;
    keep.sort_unstable();
    let chips = keep.into_iter().map(|i| set.chips()[i].clone()).collect();
    ChipSet::new(chips, set.provenance.clone())
}

/// Assignment of every chip to exactly one role.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub assignments: Vec<(String, Role)>,
    pub fractions: [f64; 4],
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFooter {
    fractions: [f64; 4],
    seed: u64,
    counts: HashMap<Role, usize>,
}

fn check_fractions(fractions: &[f64; 4]) -> Result<()> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::Config(format!("fractions {fractions:?} must be nonnegative")));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("fractions {fractions:?} sum to {sum}, not 1")));
    }
    Ok(())
}

/// Per-role counts for a set of `total` chips of which `positives` are positive:
/// totals by largest remainder over `fractions`, then positives apportioned
/// across roles in proportion to each role's total.
pub fn split_counts(fractions: &[f64; 4], total: usize, positives: usize) -> ([usize; 4], [usize; 4]) {
    let counts = largest_remainder(fractions, total);
    let pos_weights: Vec<f64> =
        if total == 0 { vec![0.0; 4] } else { counts.iter().map(|&c| c as f64 / total as f64).collect() };
    let pos = largest_remainder(&pos_weights, positives);
    let mut c = [0; 4];
    let mut p = [0; 4];
    for r in 0..4 {
        c[r] = counts[r];
        p[r] = pos[r].min(counts[r]);
    }
    (c, p)
}

/// Partition `set` into roles. Positives and negatives are shuffled
/// independently so every role keeps the input's class balance.
pub fn split_chipset(set: &ChipSet, fractions: [f64; 4], seed: u64) -> Result<SplitManifest> {
    check_fractions(&fractions)?;
    let mut pos: Vec<&str> = set.chips().iter().filter(|c| c.has_landslide()).map(|c| c.chip_id()).collect();
    let mut neg: Vec<&str> = set.chips().iter().filter(|c| !c.has_landslide()).map(|c| c.chip_id()).collect();
    let (counts, pos_counts) = split_counts(&fractions, set.len(), pos.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut role_of: HashMap<&str, Role> = HashMap::with_capacity(set.len());
    let (mut pi, mut ni) = (0, 0);
    for role in Role::ALL {
        let r = role.index();
        for id in &pos[pi..pi + pos_counts[r]] {
            role_of.insert(id, role);
        }
        pi += pos_counts[r];
        let n_neg = counts[r] - pos_counts[r];
        for id in &neg[ni..ni + n_neg] {
            role_of.insert(id, role);
        }
        ni += n_neg;
    }
    let assignments = set.chips().iter().map(|c| (c.chip_id().to_string(), role_of[c.chip_id()])).collect();
    Ok(SplitManifest { assignments, fractions, seed })
}

impl SplitManifest {
    pub fn counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for (_, r) in &self.assignments {
            c[r.index()] += 1;
        }
        c
    }

    pub fn ids(&self, role: Role) -> Vec<&str> {
        self.assignments.iter().filter(|(_, r)| *r == role).map(|(id, _)| id.as_str()).collect()
    }

    pub fn role_of(&self, chip_id: &str) -> Option<Role> {
        self.assignments.iter().find(|(id, _)| id == chip_id).map(|(_, r)| *r)
    }

    /// Chips of one role, in source order.
    pub fn select(&self, set: &ChipSet, role: Role) -> Result<ChipSet> {
        set.select(self.ids(role))
    }

    /// Write `<path>` (CSV `chip_id,role`) and its JSON footer `<path>.json`.
    pub fn write(&self, csv_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["chip_id", "role"]).map_err(|e| Error::Data(e.to_string()))?;
        for (id, role) in &self.assignments {
            w.write_record([id.as_str(), role.as_str()]).map_err(|e| Error::Data(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        write_new(csv_path, &bytes)?;
        let counts = Role::ALL.iter().map(|r| (*r, self.counts()[r.index()])).collect();
        let footer = ManifestFooter { fractions: self.fractions, seed: self.seed, counts };
        write_new(&footer_path(csv_path), &serde_json::to_vec_pretty(&footer)?)
    }

    pub fn read(csv_path: &Path) -> Result<Self> {
        let raw = fs::read(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let mut r = csv::Reader::from_reader(raw.as_slice());
        let headers = r.headers().map_err(|e| Error::format("manifest", e.to_string()))?;
        if headers != vec!["chip_id", "role"] {
            return Err(Error::format("manifest", format!("unexpected columns {headers:?}")));
        }
        let mut assignments = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::format("manifest", e.to_string()))?;
            assignments.push((rec[0].to_string(), rec[1].parse()?));
        }
        let fp = footer_path(csv_path);
        let footer: ManifestFooter = serde_json::from_slice(&fs::read(&fp).map_err(|e| Error::io(&fp, e))?)
            .map_err(|e| Error::format("manifest footer", e.to_string()))?;
        let m = SplitManifest { assignments, fractions: footer.fractions, seed: footer.seed };
        let mut seen = std::collections::HashSet::new();
        if let Some((id, _)) = m.assignments.iter().find(|(id, _)| !seen.insert(id.as_str())) {
            return Err(Error::format("manifest", format!("chip {id} assigned twice")));
        }
        Ok(m)
    }
}

pub fn footer_path(csv_path: &Path) -> std::path::PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::super::chip::{AmplitudeImage, Chip};
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn labelled_set(pos: usize, neg: usize) -> ChipSet {
        let img = AmplitudeImage::new(2, 1, 1, vec![1.0, 1.0]).unwrap();
        let chips = (0..pos + neg)
            .map(|i| {
                Chip::new(format!("c{i:05}"), img.clone(), img.clone(), vec![(i % (pos + neg) < pos) as u8]).unwrap()
            })
            .collect();
        ChipSet::new(chips, "test").unwrap()
    }

    #[test]
    fn hamilton_examples() {
        assert_eq!(largest_remainder(&[0.75, 0.0, 0.125, 0.125], 2174), vec![1630, 0, 272, 272]);
        assert_eq!(largest_remainder(&[0.5, 0.25, 0.125, 0.125], 552), vec![276, 138, 69, 69]);
        assert_eq!(largest_remainder(&[1.0 / 3.0; 3], 2), vec![1, 1, 0]);
    }

    #[test]
    fn split_counts_table() {
        // Balanced: 1087 positives of 2174.
        let (c, p) = split_counts(&[0.75, 0.0, 0.125, 0.125], 2174, 1087);
        assert_eq!(c.iter().sum::<usize>(), 2174);
        assert_eq!(p.iter().sum::<usize>(), 1087);
        let (c, _) = split_counts(&[0.5, 0.25, 0.125, 0.125], 552, 276);
        assert_eq!(c, [276, 138, 69, 69]);
    }

    #[test]
    fn eight_chip_enumeration() {
        // Totals: 8 x (.5,.25,.125,.125) = 4,2,1,1 exactly.
        // Positives: 4 x (4/8, 2/8, 1/8, 1/8) = 2, 1, .5, .5 -> floors 2,1,0,0,
        // one leftover unit, tie at .5 broken towards validation.
        let set = labelled_set(4, 4);
        let m = split_chipset(&set, [0.5, 0.25, 0.125, 0.125], 1).unwrap();
        assert_eq!(m.counts(), [4, 2, 1, 1]);
        let pos_in = |role| m.ids(role).iter().filter(|id| set.get(id).unwrap().has_landslide()).count();
        assert_eq!(pos_in(Role::Pretrain), 2);
        assert_eq!(pos_in(Role::SegTrain), 1);
        assert_eq!(pos_in(Role::Validation), 1);
        assert_eq!(pos_in(Role::Test), 0);
    }

    #[test]
    fn invalid_fractions() {
        let set = labelled_set(2, 2);
        assert!(split_chipset(&set, [0.5, 0.5, 0.5, 0.0], 0).is_err());
        assert!(split_chipset(&set, [1.5, -0.5, 0.0, 0.0], 0).is_err());
    }

    #[test]
    fn balancing_examples() {
        let set = labelled_set(40, 60);
        let b = balance_chipset(&set, 0.5, 3).unwrap();
        assert_eq!((b.positives(), b.len()), (40, 80));
        let again = balance_chipset(&set, 0.5, 3).unwrap();
        assert_eq!(b, again);
        let ids: Vec<_> = b.chips().iter().map(|c| c.chip_id()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted, "survivors keep order");

        let even = labelled_set(50, 50);
        assert_eq!(balance_chipset(&even, 0.5, 9).unwrap(), even);

        // over-represented positives are trimmed too
        let b = balance_chipset(&labelled_set(70, 30), 0.5, 1).unwrap();
        assert_eq!((b.positives(), b.len()), (30, 60));

        assert!(balance_chipset(&labelled_set(0, 10), 0.5, 1).is_err());
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let set = labelled_set(10, 10);
        let m = split_chipset(&set, [0.5, 0.25, 0.125, 0.125], 5).unwrap();
        let p = dir.path().join("split.csv");
        m.write(&p).unwrap();
        assert_eq!(SplitManifest::read(&p).unwrap(), m);
    }

    proptest! {
        #[test]
        fn split_is_balanced_partition(half in 1usize..200, seed in any::<u64>(), a in 0u32..100, b in 0u32..100, c in 0u32..100) {
            let set = labelled_set(half, half);
            let total = (a + b + c + 1) as f64;
            let fr = [a as f64 / total, b as f64 / total, c as f64 / total, 1.0 / total];
            let fr = [fr[0], fr[1], fr[2], 1.0 - fr[0] - fr[1] - fr[2]];
            let m = split_chipset(&set, fr, seed).unwrap();
            prop_assert_eq!(m.assignments.len(), set.len());
            prop_assert_eq!(m.counts().to_vec(), largest_remainder(&fr, set.len()));
            for role in Role::ALL {
                let ids = m.ids(role);
                let pos = ids.iter().filter(|id| set.get(id).unwrap().has_landslide()).count() as f64;
                prop_assert!((pos - ids.len() as f64 / 2.0).abs() <= 1.0);
            }
            prop_assert_eq!(split_chipset(&set, fr, seed).unwrap(), m);
        }
    }
}
