//! The exponential mechanism over a finite candidate list.
//!
//! A candidate with utility `u` is drawn with probability proportional to
//! `exp(epsilon1 * u)` (sensitivity 1). The privacy cost of one draw is
//! `2 * epsilon1`; callers derive `epsilon1` from their total budget with
//! [`crate::samplers::budget_split`].
//!
//! Weights are computed after shifting every utility by the maximum, so
//! utilities in the tens of thousands do not overflow.

use rand::Rng;

use crate::dataset::Context;
use crate::error::{PcorError, Result};
use crate::utility::UtilityValue;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedDraw {
    pub chosen: Context,
    pub chosen_index: usize,
    pub probabilities: Vec<(Context, f64)>,
}

fn check(utilities: &[UtilityValue], epsilon1: f64) -> Result<f64> {
    if utilities.is_empty() {
        return Err(PcorError::EmptyCandidates);
    }
    if !(epsilon1 >= 0.0) || !epsilon1.is_finite() {
        return Err(PcorError::Config(format!(
            "epsilon1 = {epsilon1} must be finite and non-negative"
        )));
    }
    utilities
        .iter()
        .filter_map(UtilityValue::finite)
        .max_by(f64::total_cmp)
        .ok_or(PcorError::NoValidCandidate)
}

/// Unnormalised, max-shifted weights; zero for `NegInfinity`.
fn shifted_weights(utilities: &[UtilityValue], epsilon1: f64, max: f64) -> Vec<f64> {
    utilities
        .iter()
        .map(|u| match u {
            UtilityValue::Finite(v) => (epsilon1 * (v - max)).exp(),
            UtilityValue::NegInfinity => 0.0,
        })
        .collect()
}

/// Selection probabilities of the mechanism, without drawing.
pub fn exact_probabilities(utilities: &[UtilityValue], epsilon1: f64) -> Result<Vec<f64>> {
    let max = check(utilities, epsilon1)?;
    let weights = shifted_weights(utilities, epsilon1, max);
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Natural-log selection probabilities; `-inf` for `NegInfinity` candidates.
/// Stays accurate where [`exact_probabilities`] underflows to zero.
pub fn log_probabilities(utilities: &[UtilityValue], epsilon1: f64) -> Result<Vec<f64>> {
    let max = check(utilities, epsilon1)?;
    let weights = shifted_weights(utilities, epsilon1, max);
    let log_total = weights.iter().sum::<f64>().ln();
    Ok(utilities
        .iter()
        .map(|u| match u {
            UtilityValue::Finite(v) => epsilon1 * (v - max) - log_total,
            UtilityValue::NegInfinity => f64::NEG_INFINITY,
        })
        .collect())
}

/// Draws one candidate index by inverse CDF over the max-shifted weights.
/// A uniform value that lands exactly on a boundary goes to the lower index.
pub fn draw_index<R: Rng + ?Sized>(utilities: &[UtilityValue], epsilon1: f64, rng: &mut R) -> Result<usize> {
    let max = check(utilities, epsilon1)?;
    let weights = shifted_weights(utilities, epsilon1, max);
    let total: f64 = weights.iter().sum();
    let point = rng.random::<f64>() * total;
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            cumulative += w;
            last_positive = i;
            if point < cumulative {
                return Ok(i);
            }
        }
    }
    // rounding left `point` past the final boundary
    Ok(last_positive)
}

/// One differentially private draw from `candidates`. Duplicate contexts
/// are independent candidates.
pub fn exp_mechanism<R: Rng + ?Sized>(
    candidates: &[(Context, UtilityValue)],
    epsilon1: f64,
    rng: &mut R,
) -> Result<WeightedDraw> {
    let utilities: Vec<UtilityValue> = candidates.iter().map(|(_, u)| *u).collect();
    let probabilities = exact_probabilities(&utilities, epsilon1)?;
    let chosen_index = draw_index(&utilities, epsilon1, rng)?;
    Ok(WeightedDraw {
        chosen: candidates[chosen_index].0,
        chosen_index,
        probabilities: candidates.iter().map(|(c, _)| *c).zip(probabilities).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fin(xs: &[f64]) -> Vec<UtilityValue> {
        xs.iter().map(|&x| UtilityValue::Finite(x)).collect()
    }

    #[test]
    fn equal_utilities_are_equiprobable() {
        let p = exact_probabilities(&fin(&[3.0, 3.0]), 0.7).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = exact_probabilities(&fin(&[1.0; 8]), 2.0).unwrap();
        assert!(p.iter().all(|&x| (x - 0.125).abs() < 1e-15));
    }

    #[test]
    fn ln3_gives_quarter_three_quarters() {
        let p = exact_probabilities(&fin(&[0.0, 3f64.ln()]), 1.0).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn five_four_at_point_one() {
        let p = exact_probabilities(&fin(&[5.0, 4.0]), 0.1).unwrap();
        let (a, b) = (0.5f64.exp(), 0.4f64.exp());
        assert!((p[0] - a / (a + b)).abs() < 1e-12);
        assert!((p[0] - 0.52498).abs() < 1e-5);
        assert!((p[1] - 0.47502).abs() < 1e-5);
    }

    #[test]
    fn single_finite_candidate_gets_everything() {
        let u = vec![
            UtilityValue::NegInfinity,
            UtilityValue::Finite(7.0),
            UtilityValue::NegInfinity,
        ];
        assert_eq!(exact_probabilities(&u, 0.3).unwrap(), vec![0.0, 1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(draw_index(&u, 0.3, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(exact_probabilities(&[], 1.0), Err(PcorError::EmptyCandidates)));
        assert!(matches!(
            exact_probabilities(&[UtilityValue::NegInfinity], 1.0),
            Err(PcorError::NoValidCandidate)
        ));
        assert!(exact_probabilities(&fin(&[1.0]), -1.0).is_err());
    }

    #[test]
    fn huge_utilities_do_not_overflow() {
        let p = exact_probabilities(&fin(&[1e5, 1e5 - 1.0]), 1.0).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_epsilon_is_uniform_over_valid() {
        let u = vec![
            UtilityValue::Finite(1.0),
            UtilityValue::NegInfinity,
            UtilityValue::Finite(1e4),
        ];
        assert_eq!(exact_probabilities(&u, 0.0).unwrap(), vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn draws_are_replayable() {
        let u = fin(&[1.0, 2.0, 3.0, 4.0]);
        let a: Vec<usize> = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..50).map(|_| draw_index(&u, 0.5, &mut rng).unwrap()).collect()
        };
        let b: Vec<usize> = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..50).map(|_| draw_index(&u, 0.5, &mut rng).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    fn utilities() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-500.0f64..500.0, 1..30)
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(u in utilities(), eps in 0.0f64..2.0) {
            let p = exact_probabilities(&fin(&u), eps).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn shift_invariance(u in utilities(), eps in 0.0f64..0.5, c in -1000.0f64..1000.0) {
            let shifted: Vec<f64> = u.iter().map(|x| x + c).collect();
            let p = exact_probabilities(&fin(&u), eps).unwrap();
            let q = exact_probabilities(&fin(&shifted), eps).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn monotone_in_utility(u in utilities(), eps in 0.0f64..2.0) {
            let p = exact_probabilities(&fin(&u), eps).unwrap();
            for i in 0..u.len() {
                for j in 0..u.len() {
                    if u[i] > u[j] {
                        prop_assert!(p[i] >= p[j]);
                    }
                }
            }
        }

        #[test]
        fn log_probabilities_agree(u in prop::collection::vec(-20.0f64..20.0, 1..30), eps in 0.0f64..2.0) {
            let p = exact_probabilities(&fin(&u), eps).unwrap();
            let lp = log_probabilities(&fin(&u), eps).unwrap();
            for (a, b) in p.iter().zip(&lp) {
                prop_assert!((a.ln() - b).abs() < 1e-9);
            }
        }

        #[test]
        fn neighbouring_utilities_bound_the_ratio(
            pairs in prop::collection::vec((-300.0f64..300.0, -1.0f64..=1.0), 1..25),
            eps in prop::sample::select(vec![0.01, 0.1, 1.0]),
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
            let la = log_probabilities(&fin(&a), eps).unwrap();
            let lb = log_probabilities(&fin(&b), eps).unwrap();
            for (x, y) in la.iter().zip(&lb) {
                prop_assert!((x - y).abs() <= 2.0 * eps + 1e-9);
            }
        }
    }
}
