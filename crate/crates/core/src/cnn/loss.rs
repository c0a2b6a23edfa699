use crate::error::{Error, Result};

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, and its gradient
/// `softmax - onehot(label)` with respect to the logits.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_norm = max + sum.ln();
    let loss = log_norm - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - log_norm).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Index of the largest score; the smallest index wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        for k in 2..6 {
            let (loss, _) = softmax_cross_entropy(&vec![0.3; k], 0).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn stable_for_large_logits() {
        let (loss, grad) = softmax_cross_entropy(&[1000.0, 0.0], 0).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn direct_evaluation() {
        let (loss, grad) = softmax_cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap();
        let e = [1f64.exp(), 2f64.exp(), 3f64.exp()];
        let want = -(e[2] / (e[0] + e[1] + e[2])).ln();
        assert!((loss - want).abs() < 1e-12);
        assert!((loss - 0.40761).abs() < 1e-5);
        assert!((grad[2] - (e[2] / e.iter().sum::<f64>() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        assert!(softmax_cross_entropy(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in prop::collection::vec(-1e3f64..1e3, 2..8)) {
            let p = softmax(&logits);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn argmax_shift_invariant(logits in prop::collection::vec(-50f64..50.0, 2..8), c in -100f64..100.0) {
            let shifted: Vec<f64> = logits.iter().map(|z| z + c).collect();
            // Shifting can merge near-ties through rounding; compare scores instead of indices then.
            let (a, b) = (argmax(&logits), argmax(&shifted));
            prop_assert!(a == b || (logits[a] - logits[b]).abs() < 1e-9);
        }
    }
}
