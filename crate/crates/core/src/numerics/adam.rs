use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate must be > 0, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("Adam eps must be > 0"));
        }
        Ok(())
    }
}

/// One bias-corrected Adam descent step on `params` (moments live in the store).
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
    cfg.validate()?;
    if !grads.is_congruent(params) {
        return Err(Error::config(
            "gradients are not shape-congruent with parameters",
        ));
    }
    if !grads.is_finite() {
        return Err(Error::numeric("non-finite gradient passed to Adam"));
    }
    let (arrays, state) = params.adam_parts_mut();
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, array) in arrays.iter_mut().enumerate() {
        let g = grads.array(i);
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for j in 0..array.values.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            array.values[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore {
        let mut p = ParamStore::new();
        let i = p.add("x", &[values.len()]);
        p.values_mut(i).copy_from_slice(values);
        p
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut p = store(&[1.0, -2.0]);
        let mut g = Gradients::zeros_like(&p);
        g.array_mut(0).copy_from_slice(&[0.5, 0.5]);
        adam_step(&mut p, &g, &AdamConfig::with_lr(0.1)).unwrap();
        let before = p.values(0).to_vec();
        let m_before = p.adam().first[0].clone();
        g.fill_zero();
        adam_step(&mut p, &g, &AdamConfig::with_lr(0.1)).unwrap();
        // m decays by beta1, so the update is not exactly zero after a nonzero history;
        // from a fresh state it is.
        for (a, b) in p.adam().first[0].iter().zip(&m_before) {
            assert!((a - 0.9 * b).abs() < 1e-15);
        }
        let mut fresh = store(&[1.0, -2.0]);
        let zero = Gradients::zeros_like(&fresh);
        adam_step(&mut fresh, &zero, &AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(fresh.values(0), &[1.0, -2.0]);
        assert_eq!(fresh.adam().step, 1);
        assert_ne!(p.values(0), before.as_slice());
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        // Step 1: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
        for g0 in [1e-3, 0.7, -42.0, 1e4] {
            let mut p = store(&[0.0]);
            let mut g = Gradients::zeros_like(&p);
            g.array_mut(0)[0] = g0;
            let cfg = AdamConfig::with_lr(0.01);
            adam_step(&mut p, &g, &cfg).unwrap();
            let expected = -0.01 * g0 / (g0.abs() + 1e-8);
            assert!((p.values(0)[0] - expected).abs() < 1e-15);
            assert!((p.values(0)[0] + 0.01 * g0.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn tiny_learning_rate_is_accepted() {
        let mut p = store(&[0.0]);
        let mut g = Gradients::zeros_like(&p);
        g.array_mut(0)[0] = 1.0;
        adam_step(&mut p, &g, &AdamConfig::with_lr(5e-7)).unwrap();
        assert!((p.values(0)[0] + 5e-7).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = store(&[0.0]);
        let mut g = Gradients::zeros_like(&p);
        g.array_mut(0)[0] = f64::INFINITY;
        assert!(matches!(
            adam_step(&mut p, &g, &AdamConfig::with_lr(0.1)),
            Err(Error::Numeric(_))
        ));
        assert_eq!(p.adam().step, 0);
    }

    #[test]
    fn bad_learning_rate_is_config_error() {
        let mut p = store(&[0.0]);
        let g = Gradients::zeros_like(&p);
        assert!(adam_step(&mut p, &g, &AdamConfig::with_lr(0.0)).is_err());
    }
}
