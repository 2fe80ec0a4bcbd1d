//! Feed-forward scoring network: `tanh` hidden layers and a scalar linear head.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Layer widths of a scalar-output MLP. `hidden` may be empty (pure linear model).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub input: usize,
    pub hidden: Vec<usize>,
}

impl Mlp {
    pub fn new(input: usize, hidden: Vec<usize>) -> Self {
        Self { input, hidden }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend(&self.hidden);
        w.push(1);
        w
    }

    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    /// Allocates zeroed parameters: `w{i}` with shape `(out, in)` and `b{i}`.
    pub fn zeros(&self) -> ParamStore {
        let widths = self.widths();
        let mut p = ParamStore::new();
        for l in 0..self.num_layers() {
            p.add(format!("w{l}"), &[widths[l + 1], widths[l]]);
            p.add(format!("b{l}"), &[widths[l + 1]]);
        }
        p
    }

    /// Scaled-normal initialisation (`1/sqrt(fan_in)`), zero biases.
    pub fn init(&self, rng: &mut Rng) -> ParamStore {
        let widths = self.widths();
        let mut p = self.zeros();
        for l in 0..self.num_layers() {
            let scale = 1.0 / (widths[l] as f64).sqrt();
            for v in p.values_mut(2 * l) {
                let z: f64 = rng.sample(StandardNormal);
                *v = z * scale;
            }
        }
        p
    }

    fn check(&self, params: &ParamStore, features: &[f64]) -> Result<()> {
        if features.len() != self.input {
            return Err(Error::config(format!(
                "feature length {} does not match input width {}",
                features.len(),
                self.input
            )));
        }
        if params.len() != 2 * self.num_layers() {
            return Err(Error::config("parameter store does not match MLP layout"));
        }
        Ok(())
    }

    /// Layer activations, input first and the scalar output last.
    fn activations(&self, params: &ParamStore, features: &[f64]) -> Vec<Vec<f64>> {
        let widths = self.widths();
        let last = self.num_layers() - 1;
        let mut acts = Vec::with_capacity(widths.len());
        acts.push(features.to_vec());
        for l in 0..self.num_layers() {
            let w = params.values(2 * l);
            let b = params.values(2 * l + 1);
            let input = &acts[l];
            let (n_out, n_in) = (widths[l + 1], widths[l]);
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut z = b[o];
                for (wi, xi) in row.iter().zip(input) {
                    z += wi * xi;
                }
                out.push(if l == last { z } else { z.tanh() });
            }
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, params: &ParamStore, features: &[f64]) -> Result<f64> {
        self.check(params, features)?;
        Ok(self.activations(params, features)[self.num_layers()][0])
    }

    /// Gradient of `upstream * forward(features)` with respect to every parameter.
    pub fn backward(
        &self,
        params: &ParamStore,
        features: &[f64],
        upstream: f64,
    ) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(params);
        self.accumulate_backward(params, features, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Adds `upstream * d forward / d params` into `grads`; returns the forward value.
    pub fn accumulate_backward(
        &self,
        params: &ParamStore,
        features: &[f64],
        upstream: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        self.check(params, features)?;
        if !upstream.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite upstream gradient {upstream}"
            )));
        }
        let widths = self.widths();
        let acts = self.activations(params, features);
        let out = acts[self.num_layers()][0];
        let mut delta = vec![upstream];
        for l in (0..self.num_layers()).rev() {
            let (n_out, n_in) = (widths[l + 1], widths[l]);
            let input = &acts[l];
            {
                let gw = grads.array_mut(2 * l);
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            {
                let gb = grads.array_mut(2 * l + 1);
                for (g, d) in gb.iter_mut().zip(&delta) {
                    *g += d;
                }
            }
            if l > 0 {
                let w = params.values(2 * l);
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
                // acts[l] holds tanh outputs of layer l-1.
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_weights_return_final_bias() {
        let mlp = Mlp::new(3, vec![4]);
        let mut p = mlp.zeros();
        p.values_mut(3)[0] = 0.75;
        assert_eq!(mlp.forward(&p, &[1.0, -2.0, 5.0]).unwrap(), 0.75);
    }

    #[test]
    fn linear_layer_sums_inputs() {
        let mlp = Mlp::new(2, vec![]);
        let mut p = mlp.zeros();
        p.values_mut(0).copy_from_slice(&[1.0, 1.0]);
        assert_eq!(mlp.forward(&p, &[1.0, 2.0]).unwrap(), 3.0);
    }

    #[test]
    fn forward_is_deterministic() {
        let mlp = Mlp::new(5, vec![8, 4]);
        let p = mlp.init(&mut stream(3, "mlp", 0));
        let x = [0.3, -0.1, 0.9, 0.0, -1.2];
        let a = mlp.forward(&p, &x).unwrap();
        let b = mlp.forward(&p, &x).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let mlp = Mlp::new(3, vec![2]);
        let p = mlp.zeros();
        assert!(matches!(mlp.forward(&p, &[1.0]), Err(Error::Config(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mlp = Mlp::new(3, vec![4]);
        let p = mlp.init(&mut stream(1, "mlp", 0));
        let g = mlp.backward(&p, &[0.2, 0.4, -0.6], 0.0).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn linear_weight_gradient_equals_feature() {
        let mlp = Mlp::new(3, vec![]);
        let p = mlp.init(&mut stream(1, "mlp", 1));
        let x = [0.2, 0.4, -0.6];
        let g = mlp.backward(&p, &x, 1.0).unwrap();
        assert_eq!(g.array(0), &x);
        assert_eq!(g.array(1), &[1.0]);
    }

    #[test]
    fn non_finite_upstream_is_numeric_error() {
        let mlp = Mlp::new(2, vec![]);
        let p = mlp.zeros();
        assert!(matches!(
            mlp.backward(&p, &[1.0, 1.0], f64::NAN),
            Err(Error::Numeric(_))
        ));
    }
}
