//! Loss functions with closed-form gradients.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn same_len<T>(a: &[T], b: &[T], what: &str) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("{what}: {} predictions vs {} labels", a.len(), b.len())));
    }
    Ok(())
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Mean binary cross-entropy on logits, in the overflow-free form
/// `max(x, 0) - x y + ln(1 + exp(-|x|))`.
pub fn bce_with_logits<T: Scalar>(logits: &[T], labels: &[T]) -> Result<T> {
    bce_with_logits_grad(logits, labels).map(|(l, _)| l)
}

/// Loss and its gradient with respect to each logit.
pub fn bce_with_logits_grad<T: Scalar>(logits: &[T], labels: &[T]) -> Result<(T, Vec<T>)> {
    same_len(logits, labels, "bce")?;
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Divergence("non-finite logit".into()));
    }
    let n = T::of(logits.len() as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &y) in logits.iter().zip(labels) {
        loss += x.max(T::zero()) - x * y + (-x.abs()).exp().ln_1p();
        grad.push((sigmoid(x) - y) / n);
    }
    Ok((loss / n, grad))
}

/// `1 - (2 sum(p t) + s) / (sum(p) + sum(t) + s)`.
pub fn dice_loss<T: Scalar>(probs: &[T], target: &[T], smoothing: T) -> Result<T> {
    dice_loss_grad(probs, target, smoothing).map(|(l, _)| l)
}

/// Dice loss and its gradient with respect to the probabilities.
pub fn dice_loss_grad<T: Scalar>(probs: &[T], target: &[T], smoothing: T) -> Result<(T, Vec<T>)> {
    same_len(probs, target, "dice")?;
    let two = T::of(2.0);
    let (mut inter, mut sp, mut st) = (T::zero(), T::zero(), T::zero());
    for (&p, &t) in probs.iter().zip(target) {
        inter += p * t;
        sp += p;
        st += t;
    }
    let num = two * inter + smoothing;
    let den = sp + st + smoothing;
    let den2 = den * den;
    let grad = target.iter().map(|&t| -(two * t * den - num) / den2).collect();
    Ok((T::one() - num / den, grad))
}

/// Dice loss of `sigmoid(logits)` and its gradient with respect to the logits.
pub fn dice_loss_logits<T: Scalar>(logits: &[T], target: &[T], smoothing: T) -> Result<(T, Vec<T>)> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Divergence("non-finite logit".into()));
    }
    let probs: Vec<T> = logits.iter().map(|&x| sigmoid(x)).collect();
    let (loss, dp) = dice_loss_grad(&probs, target, smoothing)?;
    let grad = dp.iter().zip(&probs).map(|(&d, &p)| d * p * (T::one() - p)).collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bce_examples() {
        assert_relative_eq!(bce_with_logits(&[0.0f64], &[1.0]).unwrap(), std::f64::consts::LN_2, epsilon = 1e-12);
        let tiny = bce_with_logits(&[20.0f64], &[1.0]).unwrap();
        assert_relative_eq!(tiny, 2.061_153_618_190_204_4e-9, max_relative = 1e-9);
        assert_relative_eq!(
            bce_with_logits(&[0.0f64, 0.0], &[1.0, 0.0]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert!(bce_with_logits(&[1e4f32], &[0.0]).unwrap().is_finite());
        assert!(bce_with_logits(&[0.0f32], &[]).is_err());
    }

    #[test]
    fn dice_examples() {
        let ones = [1.0f64; 4];
        let zeros = [0.0f64; 4];
        assert_eq!(dice_loss(&ones, &ones, 1.0).unwrap(), 0.0);
        assert_relative_eq!(dice_loss(&zeros, &ones, 1.0).unwrap(), 0.8, epsilon = 1e-15);
        assert_eq!(dice_loss(&zeros, &zeros, 1.0).unwrap(), 0.0);
        assert!(dice_loss(&zeros, &[0.0; 3], 1.0).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_relative_eq!(sigmoid(0.3f64) + sigmoid(-0.3), 1.0, epsilon = 1e-15);
    }
}
