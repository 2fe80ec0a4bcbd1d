use serde::{Deserialize, Serialize};

use super::net::RewardNet;
use crate::error::{Error, Result};
use crate::scoring::{mean_std, Scorer};
use crate::synth_env::{Prompt, Response};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisagreementMode {
    /// Population standard deviation of member scores.
    Std,
    /// `R_1 - lambda * R_2` over the first two members.
    WeightedDiff,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub scores: Vec<f64>,
    pub value: f64,
    pub mode: DisagreementMode,
}

/// Disagreement of normalized member scores.
pub fn disagreement(
    members: &[&RewardNet],
    prompt: &Prompt,
    response: &Response,
    mode: DisagreementMode,
    lambda: Option<f64>,
) -> Result<EnsembleStats> {
    if members.len() < 2 {
        return Err(Error::config(
            "disagreement needs at least two ensemble members",
        ));
    }
    let scores = members
        .iter()
        .map(|m| m.score(prompt, response, true))
        .collect::<Result<Vec<_>>>()?;
    let value = disagreement_of_scores(&scores, mode, lambda)?;
    Ok(EnsembleStats {
        scores,
        value,
        mode,
    })
}

/// [`disagreement`] on already-computed member scores.
pub fn disagreement_of_scores(
    scores: &[f64],
    mode: DisagreementMode,
    lambda: Option<f64>,
) -> Result<f64> {
    if scores.len() < 2 {
        return Err(Error::config("disagreement needs at least two scores"));
    }
    match mode {
        DisagreementMode::Std => {
            if lambda.is_some() {
                return Err(Error::config("lambda is not used in std mode"));
            }
            Ok(mean_std(scores).1)
        }
        DisagreementMode::WeightedDiff => {
            let lambda =
                lambda.ok_or_else(|| Error::config("weighted_diff mode needs a lambda"))?;
            Ok(weighted_diff(scores[0], scores[1], lambda))
        }
    }
}

/// `r1 - lambda * r2`.
pub fn weighted_diff(r1: f64, r2: f64, lambda: f64) -> f64 {
    r1 - lambda * r2
}

/// Mean and standard deviation of the disagreement over SFT responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReference {
    pub mean: f64,
    pub std: f64,
}

impl UncertaintyReference {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let (mean, std) = mean_std(values);
        let r = Self { mean, std };
        r.check()?;
        Ok(r)
    }

    fn check(&self) -> Result<()> {
        if !(self.std > 0.0 && self.std.is_finite() && self.mean.is_finite()) {
            return Err(Error::state(format!(
                "uncertainty reference is not calibrated (mean {}, std {})",
                self.mean, self.std
            )));
        }
        Ok(())
    }
}

/// `(u - mean) / std` against the SFT reference.
pub fn uncertainty_zscore(u: f64, reference: &UncertaintyReference) -> Result<f64> {
    reference.check()?;
    Ok((u - reference.mean) / reference.std)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn std_of_two_is_half_gap() {
        let v = disagreement_of_scores(&[1.0, 3.0], DisagreementMode::Std, None).unwrap();
        assert_eq!(v, 1.0);
        for (a, b) in [(0.2, -1.4), (5.0, 5.0), (-3.0, 2.5)] {
            let s = disagreement_of_scores(&[a, b], DisagreementMode::Std, None).unwrap();
            assert!((s - 0.5 * f64::abs(a - b)).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_diff_arithmetic() {
        let v = disagreement_of_scores(&[0.5, 0.2], DisagreementMode::WeightedDiff, Some(10.0))
            .unwrap();
        assert!((v + 1.5).abs() < 1e-12);
    }

    #[test]
    fn lambda_in_std_mode_is_config_error() {
        assert!(matches!(
            disagreement_of_scores(&[1.0, 2.0], DisagreementMode::Std, Some(1.0)),
            Err(Error::Config(_))
        ));
        assert!(disagreement_of_scores(&[1.0], DisagreementMode::Std, None).is_err());
        assert!(disagreement_of_scores(&[1.0, 2.0], DisagreementMode::WeightedDiff, None).is_err());
    }

    #[test]
    fn zscore_examples() {
        let r = UncertaintyReference {
            mean: 1.0,
            std: 2.0,
        };
        assert_eq!(uncertainty_zscore(1.0, &r).unwrap(), 0.0);
        let z = uncertainty_zscore(5.0, &r).unwrap();
        assert_eq!(z, 2.0);
        assert!(z > 1.96);
        let bad = UncertaintyReference {
            mean: 0.0,
            std: 0.0,
        };
        assert!(matches!(
            uncertainty_zscore(1.0, &bad),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn reference_zscores_are_standardised() {
        let values: Vec<f64> = (0..50)
            .map(|i| (i as f64 * 0.37).sin() * 3.0 + 1.0)
            .collect();
        let r = UncertaintyReference::from_values(&values).unwrap();
        let z: Vec<f64> = values
            .iter()
            .map(|v| uncertainty_zscore(*v, &r).unwrap())
            .collect();
        let (m, s) = mean_std(&z);
        assert!(m.abs() < 1e-12);
        assert!((s - 1.0).abs() < 1e-12);
    }
}
