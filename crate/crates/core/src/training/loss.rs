use thiserror::Error;

use crate::tensor::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("empty candidate set")]
    EmptyCandidates,
    #[error("target {0} is not among the candidates")]
    TargetNotCandidate(usize),
}

/// `-log softmax(logits over candidates)[target]` and its gradient with
/// respect to the full logit vector (zero outside the candidates).
///
/// `candidates = None` means every entity. Max-subtraction keeps the
/// exponentials in range.
pub fn multiclass_log_loss<T: Scalar>(
    logits: &[T],
    target: usize,
    candidates: Option<&[usize]>,
) -> Result<(T, Vec<T>), LossError> {
    let all: Vec<usize>;
    let cands = match candidates {
        Some(c) => c,
        None => {
            all = (0..logits.len()).collect();
            &all
        }
    };
    if cands.is_empty() {
        return Err(LossError::EmptyCandidates);
    }
    if target >= logits.len() || !cands.contains(&target) {
        return Err(LossError::TargetNotCandidate(target));
    }
    let max = cands.iter().map(|&c| logits[c]).fold(T::neg_infinity(), T::max);
    let total: T = cands.iter().map(|&c| (logits[c] - max).exp()).sum();
    let log_z = total.ln() + max;
    let loss = log_z - logits[target];
    let mut grad = vec![T::zero(); logits.len()];
    for &c in cands {
        grad[c] += (logits[c] - log_z).exp();
    }
    grad[target] -= T::one();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_equal_candidates() {
        let (loss, grad) = multiclass_log_loss(&[0.3f64, 0.3], 0, None).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((grad[0] + 0.5).abs() < 1e-12 && (grad[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dominant_target_has_vanishing_loss() {
        let (loss, _) = multiclass_log_loss(&[1000.0f64, 0.0, -3.0], 0, None).unwrap();
        assert!(loss >= 0.0 && loss < 1e-12);
    }

    #[test]
    fn errors() {
        assert_eq!(multiclass_log_loss(&[0.0f32], 0, Some(&[])), Err(LossError::EmptyCandidates));
        assert_eq!(
            multiclass_log_loss(&[0.0f32, 1.0], 0, Some(&[1])),
            Err(LossError::TargetNotCandidate(0))
        );
    }

    #[test]
    fn matches_direct_evaluation() {
        // Direct log-sum-exp without max shift; the values are small enough.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let logits: Vec<f64> = (0..10).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let target = 6;
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        let expected = -(logits[target].exp() / z).ln();
        let (loss, grad) = multiclass_log_loss(&logits, target, None).unwrap();
        assert!((loss - expected).abs() < 1e-9);
        for (i, g) in grad.iter().enumerate() {
            let direct = logits[i].exp() / z - if i == target { 1.0 } else { 0.0 };
            assert!((g - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn subset_ignores_other_logits() {
        let logits = [2.0f64, 50.0, 1.0, -1.0];
        let (loss, grad) = multiclass_log_loss(&logits, 0, Some(&[0, 2, 3])).unwrap();
        let z = 2f64.exp() + 1f64.exp() + (-1f64).exp();
        assert!((loss - (z.ln() - 2.0)).abs() < 1e-12);
        assert_eq!(grad[1], 0.0);
    }

    proptest! {
        #[test]
        fn loss_positive_and_gradient_sums_to_zero(logits in prop::collection::vec(-10.0f64..10.0, 2..30), t in any::<prop::sample::Index>()) {
            let target = t.index(logits.len());
            let (loss, grad) = multiclass_log_loss(&logits, target, None).unwrap();
            prop_assert!(loss > 0.0);
            prop_assert!(grad.iter().sum::<f64>().abs() < 1e-8);
        }
    }
}
