use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Numerically stable `log(sum(exp(xs)))` over the finite entries.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Log-softmax of `logits / temperature`. Entries equal to `-inf` stay masked.
pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let lse = log_sum_exp(&scaled);
    scaled.iter().map(|s| s - lse).collect()
}

pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    log_softmax(logits, temperature)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Draws an index from `softmax(logits / temperature)`; returns it with its log-probability.
pub fn categorical_sample(logits: &[f64], temperature: f64, rng: &mut Rng) -> Result<(usize, f64)> {
    if logits.is_empty() {
        return Err(Error::config("cannot sample from empty logits"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::config(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    if logits.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::numeric("logits must be finite or -inf (masked)"));
    }
    let logp = log_softmax(logits, temperature);
    if logp.iter().all(|l| *l == f64::NEG_INFINITY) {
        return Err(Error::config("every logit is masked"));
    }
    let index = sample_from_log_probs(&logp, rng);
    Ok((index, logp[index]))
}

/// Inverse-CDF draw from normalised log-probabilities.
pub fn sample_from_log_probs(logp: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_valid = 0;
    for (i, lp) in logp.iter().enumerate() {
        if *lp == f64::NEG_INFINITY {
            continue;
        }
        last_valid = i;
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    last_valid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn dominant_logit_is_always_drawn() {
        let mut rng = stream(0, "cat", 0);
        let logits = [0.0, 1e9, -3.0];
        for _ in 0..100 {
            let (i, lp) = categorical_sample(&logits, 1.0, &mut rng).unwrap();
            assert_eq!(i, 1);
            assert!(lp.abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_logits_match_frequencies() {
        let v = 8;
        let n = 10_000;
        let mut counts = vec![0usize; v];
        let mut rng = stream(1, "cat", 0);
        for _ in 0..n {
            counts[categorical_sample(&vec![0.3; v], 1.0, &mut rng).unwrap().0] += 1;
        }
        let p = 1.0 / v as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn returned_log_prob_matches_log_softmax() {
        let mut rng = stream(2, "cat", 0);
        let logits = [0.1, -1.3, 2.2, 0.0];
        for _ in 0..50 {
            let (i, lp) = categorical_sample(&logits, 0.7, &mut rng).unwrap();
            assert_eq!(lp, log_softmax(&logits, 0.7)[i]);
        }
    }

    #[test]
    fn empty_logits_are_config_error() {
        let mut rng = stream(0, "cat", 1);
        assert!(matches!(
            categorical_sample(&[], 1.0, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn masked_entries_are_never_drawn() {
        let mut rng = stream(0, "cat", 2);
        let logits = [f64::NEG_INFINITY, 0.0, 0.0];
        for _ in 0..200 {
            assert_ne!(categorical_sample(&logits, 1.0, &mut rng).unwrap().0, 0);
        }
    }

    #[test]
    fn shift_invariance() {
        let logits = [0.5, -0.25, 1.75];
        let shifted: Vec<f64> = logits.iter().map(|l| l + 123.0).collect();
        for (a, b) in softmax(&logits, 1.0).iter().zip(softmax(&shifted, 1.0)) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
