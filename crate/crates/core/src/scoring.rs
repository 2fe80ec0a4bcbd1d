//! Shared scoring surface for proxy reward models and the gold model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth_env::{Prompt, Response};

/// Affine normalisation statistics over a reference set of responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: f64,
    pub sigma: f64,
}

impl NormStats {
    /// Population mean and standard deviation of `values`.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let (mu, sigma) = mean_std(values);
        if values.is_empty() || !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::state(format!(
                "normalisation needs a non-degenerate reference set (n={}, std={sigma})",
                values.len()
            )));
        }
        Ok(Self { mu, sigma })
    }

    pub fn z(&self, value: f64) -> f64 {
        (value - self.mu) / self.sigma
    }
}

/// Population mean and standard deviation; `(0, 0)` for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Anything that scores a (prompt, response) pair.
pub trait Scorer {
    fn raw_score(&self, prompt: &Prompt, response: &Response) -> f64;

    fn norm(&self) -> Option<NormStats>;

    fn score(&self, prompt: &Prompt, response: &Response, normalized: bool) -> Result<f64> {
        let raw = self.raw_score(prompt, response);
        if !normalized {
            return Ok(raw);
        }
        let norm = self
            .norm()
            .ok_or_else(|| Error::state("normalized score requested before calibration"))?;
        Ok(norm.z(raw))
    }
}

/// A (prompt, response) reference sample used for calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub prompt: Prompt,
    pub response: Response,
}
