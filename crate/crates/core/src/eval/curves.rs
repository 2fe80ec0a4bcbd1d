use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy_rl::StepMetrics;

/// Default gap between peak and final gold that counts as hacking.
pub const HACKING_MARGIN: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub proxy: f64,
    pub gold: f64,
    pub length: f64,
    pub kl: f64,
}

impl From<&StepMetrics> for CurvePoint {
    fn from(m: &StepMetrics) -> Self {
        Self {
            step: m.step,
            proxy: m.mean_train_reward,
            gold: m.mean_gold_reward,
            length: m.mean_length,
            kl: m.mean_kl,
        }
    }
}

pub fn curve_from_trace(trace: &[StepMetrics]) -> Vec<CurvePoint> {
    trace.iter().map(CurvePoint::from).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HackingReport {
    pub best_step: usize,
    pub best_gold: f64,
    pub final_gold: f64,
    pub hacked: bool,
}

/// Centered moving average, truncated at both ends.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Peak and final gold of a (smoothed) curve; ties resolve to the earliest peak.
pub fn hacking_curve_report(
    trace: &[CurvePoint],
    margin: f64,
    window: usize,
) -> Result<HackingReport> {
    if trace.is_empty() {
        return Err(Error::config("hacking report of an empty trace"));
    }
    if trace.windows(2).any(|w| w[1].step <= w[0].step) {
        return Err(Error::config("curve steps must be strictly increasing"));
    }
    let gold = smooth(&trace.iter().map(|p| p.gold).collect::<Vec<_>>(), window);
    let mut best = 0;
    for (i, g) in gold.iter().enumerate() {
        if *g > gold[best] {
            best = i;
        }
    }
    let final_gold = gold[gold.len() - 1];
    Ok(HackingReport {
        best_step: trace[best].step,
        best_gold: gold[best],
        final_gold,
        hacked: final_gold < gold[best] - margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(gold: &[f64]) -> Vec<CurvePoint> {
        gold.iter()
            .enumerate()
            .map(|(i, g)| CurvePoint {
                step: i,
                proxy: 0.0,
                gold: *g,
                length: 0.0,
                kl: 0.0,
            })
            .collect()
    }

    #[test]
    fn monotone_is_not_hacked() {
        let r = hacking_curve_report(&curve(&[0.0, 0.2, 0.5, 0.9]), HACKING_MARGIN, 1).unwrap();
        assert_eq!(r.best_step, 3);
        assert_eq!(r.best_gold, r.final_gold);
        assert!(!r.hacked);
    }

    #[test]
    fn rise_then_fall_is_hacked() {
        let r =
            hacking_curve_report(&curve(&[0.0, 0.8, 1.0, 0.4, 0.1]), HACKING_MARGIN, 1).unwrap();
        assert_eq!(r.best_step, 2);
        assert!(r.hacked);
    }

    #[test]
    fn single_point() {
        let r = hacking_curve_report(&curve(&[0.3]), HACKING_MARGIN, 5).unwrap();
        assert_eq!((r.best_step, r.hacked), (0, false));
        assert_eq!(r.best_gold, r.final_gold);
    }

    #[test]
    fn smoothing_suppresses_single_spike() {
        let g = [0.0, 0.0, 2.0, 0.0, 0.0, 0.0];
        assert!(
            hacking_curve_report(&curve(&g), HACKING_MARGIN, 1)
                .unwrap()
                .hacked
        );
        let s = smooth(&g, 5);
        assert!((s[2] - 0.4).abs() < 1e-12);
        assert!((s[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(hacking_curve_report(&[], HACKING_MARGIN, 1).is_err());
        let mut c = curve(&[0.0, 1.0]);
        c[1].step = 0;
        assert!(hacking_curve_report(&c, HACKING_MARGIN, 1).is_err());
    }
}
