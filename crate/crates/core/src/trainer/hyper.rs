use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub top_k_checkpoints: usize,
    pub dice_smoothing: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            patience_epochs: 50,
            max_epochs: 1000,
            top_k_checkpoints: 5,
            dice_smoothing: 1.0,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let positive = [self.learning_rate, self.adam_eps, self.dice_smoothing];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("learning_rate, adam_eps and dice_smoothing must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.patience_epochs == 0 || self.max_epochs == 0 || self.top_k_checkpoints == 0 {
            return bad("batch_size, patience_epochs, max_epochs and top_k_checkpoints must be positive");
        }
        if self.patience_epochs > self.max_epochs {
            return bad("patience_epochs exceeds max_epochs");
        }
        Ok(())
    }
}

/// True iff the minimum of `history` (first occurrence) lies at least
/// `patience` epochs before the latest entry.
pub fn early_stop_check(history: &[f64], patience: usize) -> bool {
    let Some(best) = history.iter().enumerate().fold(None::<(usize, f64)>, |acc, (i, &v)| match acc {
        Some((_, b)) if v >= b || v.is_nan() => acc,
        _ if v.is_nan() => acc,
        _ => Some((i, v)),
    }) else {
        return false;
    };
    history.len() - 1 - best.0 >= patience
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let h = Hyperparams::default();
        h.validate().unwrap();
        assert_eq!((h.learning_rate, h.batch_size, h.top_k_checkpoints), (1e-3, 32, 5));
        let parsed: Hyperparams = serde_json::from_str(r#"{"max_epochs": 60}"#).unwrap();
        assert_eq!(parsed.patience_epochs, 50);
        assert!(serde_json::from_str::<Hyperparams>(r#"{"lr": 1}"#).is_err());
        let h = Hyperparams { patience_epochs: 10, max_epochs: 5, ..Default::default() };
        assert!(h.validate().is_err());
    }

    #[test]
    fn early_stopping_boundaries() {
        let dec: Vec<f64> = (0..80).map(|i| 100.0 - i as f64).collect();
        assert!(!early_stop_check(&dec, 50));
        let mut flat = vec![1.0];
        flat.extend(std::iter::repeat_n(2.0, 49));
        assert_eq!(flat.len(), 50);
        assert!(!early_stop_check(&flat, 50));
        flat.push(2.0);
        assert!(early_stop_check(&flat, 50));
        // ties do not count as improvement
        let tie = [1.0, 1.0, 1.0];
        assert!(early_stop_check(&tie, 2));
        assert!(!early_stop_check(&[], 3));
    }
}
