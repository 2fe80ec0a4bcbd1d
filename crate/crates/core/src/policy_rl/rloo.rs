use crate::error::{Error, Result};

/// Leave-one-out advantages: `A_i = r_i - mean_{j != i} r_j`.
///
/// The last entry absorbs rounding, so a left-to-right sum is exactly zero.
pub fn rloo_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    let k = rewards.len();
    if k < 2 {
        return Err(Error::config("RLOO needs at least two samples per prompt"));
    }
    let total: f64 = rewards.iter().sum();
    let others = (k - 1) as f64;
    let mut adv: Vec<f64> = rewards[..k - 1]
        .iter()
        .map(|r| r - (total - r) / others)
        .collect();
    let head: f64 = adv.iter().sum();
    adv.push(-head);
    Ok(adv)
}

/// `reward - beta * (logp_policy - logp_anchor)` on whole-sequence log-probs.
pub fn kl_penalized_reward(reward: f64, logp_policy: f64, logp_anchor: f64, kl_beta: f64) -> f64 {
    reward - kl_beta * (logp_policy - logp_anchor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_example() {
        let a = rloo_advantages(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let expected = [-2.0, -2.0 / 3.0, 2.0 / 3.0, 2.0];
        for (x, y) in a.iter().zip(expected) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_rewards_have_zero_advantage() {
        for a in rloo_advantages(&[0.7; 4]).unwrap() {
            assert!(a.abs() < 1e-15);
        }
        assert_eq!(rloo_advantages(&[2.0; 3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn too_few_samples_is_config_error() {
        assert!(matches!(rloo_advantages(&[1.0]), Err(Error::Config(_))));
    }

    #[test]
    fn kl_penalty_examples() {
        assert_eq!(kl_penalized_reward(1.3, -2.0, -5.0, 0.0), 1.3);
        assert_eq!(kl_penalized_reward(1.3, -2.0, -2.0, 0.4), 1.3);
        assert!((kl_penalized_reward(1.0, -1.0, -3.0, 0.1) - 0.8).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn advantages_sum_to_zero(rewards in prop::collection::vec(-50.0f64..50.0, 2..12)) {
            let a = rloo_advantages(&rewards).unwrap();
            prop_assert_eq!(a.iter().sum::<f64>(), 0.0);
            let last = rewards[rewards.len() - 1];
            let others = rewards[..rewards.len() - 1].iter().sum::<f64>() / (rewards.len() - 1) as f64;
            prop_assert!((a[a.len() - 1] - (last - others)).abs() < 1e-9);
        }

        #[test]
        fn constant_shift_leaves_advantages_unchanged(
            rewards in prop::collection::vec(-5.0f64..5.0, 2..8),
            c in -100.0f64..100.0,
        ) {
            let a = rloo_advantages(&rewards).unwrap();
            let shifted: Vec<f64> = rewards.iter().map(|r| r + c).collect();
            let b = rloo_advantages(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
