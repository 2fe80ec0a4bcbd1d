//! Minimal differentiable building blocks: parameter stores, the scoring MLP,
//! categorical sampling, Adam and checkpoints.
//!
//! There is no autodiff graph. Each of the two architectures (the scoring
//! MLP here and the autoregressive policy in `policy_rl`) carries its own
//! hand-derived backward pass, checked against central finite differences.

mod adam;
mod checkpoint;
mod mlp;
mod params;
mod sampling;

pub use adam::{adam_step, AdamConfig};
pub use checkpoint::{load_params, save_params, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use mlp::Mlp;
pub use params::{AdamState, Gradients, ParamArray, ParamStore};
pub use sampling::{categorical_sample, log_softmax, log_sum_exp, sample_from_log_probs, softmax};

/// Central finite-difference derivative of `f` with respect to each parameter
/// in `indices` (flat order). Test and diagnostic helper.
pub fn finite_difference<F>(params: &ParamStore, indices: &[usize], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut probe = params.clone();
    indices
        .iter()
        .map(|&i| {
            let orig = *probe.flat_mut(i);
            *probe.flat_mut(i) = orig + h;
            let up = f(&probe);
            *probe.flat_mut(i) = orig - h;
            let down = f(&probe);
            *probe.flat_mut(i) = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error with an absolute floor of 1e-4 on the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}
