use serde::{Deserialize, Serialize};

use crate::adv_pipeline::RoundReport;
use crate::eval::{HackingReport, SuccessRate};

/// Attack success of one method against one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub standard: f64,
    pub strict: f64,
    pub strict_se: f64,
    pub n: usize,
}

impl MethodRow {
    pub fn new(method: &str, standard: SuccessRate, strict: SuccessRate) -> Self {
        Self {
            method: method.to_string(),
            standard: standard.rate,
            strict: strict.rate,
            strict_se: strict.standard_error,
            n: strict.n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub strict: f64,
    pub strict_se: f64,
    pub standard: f64,
    pub candidates: usize,
    pub passed_filter: usize,
    pub pairs_built: usize,
    pub dataset_pairs: usize,
    pub attack_failed: bool,
}

impl RoundRow {
    pub fn new(report: &RoundReport, standard: SuccessRate, strict: SuccessRate) -> Self {
        Self {
            round: report.round,
            strict: strict.rate,
            strict_se: strict.standard_error,
            standard: standard.rate,
            candidates: report.candidates,
            passed_filter: report.passed_filter,
            pairs_built: report.pairs_built,
            dataset_pairs: report.dataset_pairs,
            attack_failed: report.attack_failed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub set: String,
    pub n: usize,
    pub pearson: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamRow {
    pub method: String,
    pub steps: usize,
    pub best_step: usize,
    pub best_gold: f64,
    pub final_gold: f64,
    pub hacked: bool,
}

impl DownstreamRow {
    pub fn new(method: &str, steps: usize, r: &HackingReport) -> Self {
        Self {
            method: method.to_string(),
            steps,
            best_step: r.best_step,
            best_gold: r.best_gold,
            final_gold: r.final_gold,
            hacked: r.hacked,
        }
    }
}

/// Everything the evaluation stage measured for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub seed: u64,
    /// Attacks on the round-0 proxy.
    pub attacks: Vec<MethodRow>,
    pub rounds: Vec<RoundRow>,
    /// Only `full` and `no_filtering` when the trained ablations are disabled.
    pub ablations: Vec<MethodRow>,
    pub correlations: Vec<CorrelationRow>,
    /// Baseline proxy trained for three times its best-gold step.
    pub overoptimization: DownstreamRow,
    pub downstream: Vec<DownstreamRow>,
}

impl EvalSummary {
    pub fn attack(&self, method: &str) -> Option<&MethodRow> {
        self.attacks.iter().find(|r| r.method == method)
    }

    pub fn ablation(&self, method: &str) -> Option<&MethodRow> {
        self.ablations.iter().find(|r| r.method == method)
    }

    pub fn correlation(&self, set: &str) -> Option<f64> {
        self.correlations
            .iter()
            .find(|r| r.set == set)
            .map(|r| r.pearson)
    }

    pub fn downstream(&self, method: &str) -> Option<&DownstreamRow> {
        self.downstream.iter().find(|r| r.method == method)
    }

    pub fn round(&self, round: usize) -> Option<&RoundRow> {
        self.rounds.iter().find(|r| r.round == round)
    }
}
