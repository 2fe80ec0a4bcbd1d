use serde::{Deserialize, Serialize};

use super::criteria::{AttackVerdict, PromptReferences};
use crate::adv_pipeline::{AdvSample, AttackTarget};
use crate::error::{Error, Result};
use crate::policy_rl::PolicyNet;
use crate::reward_model::{RewardNet, UncertaintyReference};
use crate::rng::stream;
use crate::scoring::Scorer;
use crate::synth_env::{GoldModel, Prompt, Response};

/// Adversarial attacks generated per evaluation prompt.
pub const ATTACKS_PER_PROMPT: usize = 4;

/// One line of a verdict file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRecord {
    pub prompt_id: usize,
    pub method: String,
    pub standard: bool,
    pub strict: bool,
    pub z_rm1: f64,
    pub z_gold: f64,
}

impl VerdictRecord {
    pub fn new(prompt_id: usize, method: &str, v: &AttackVerdict) -> Self {
        Self {
            prompt_id,
            method: method.to_string(),
            standard: v.standard_success,
            strict: v.strict_success,
            z_rm1: v.z_rm1,
            z_gold: v.z_gold,
        }
    }
}

pub fn verdicts_to_jsonl(records: &[VerdictRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("verdict serializes") + "\n")
        .collect()
}

/// How one attack is picked from the samples drawn for a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Highest disagreement among samples passing the filter, else highest overall.
    Filtered,
    /// Highest disagreement, ignoring the filter.
    HighestU,
}

/// Attack target on held-out prompts, with `T(x)` read off the SFT references.
pub fn eval_target<'a>(
    rm1: &'a RewardNet,
    rm2: &'a RewardNet,
    lambda: f64,
    refs: &PromptReferences,
    reference: UncertaintyReference,
) -> Result<AttackTarget<'a>> {
    let norm = rm1
        .norm()
        .ok_or_else(|| Error::state("evaluation target must be calibrated"))?;
    let thresholds = refs
        .by_prompt
        .iter()
        .map(|(id, r)| (*id, norm.z(r.rm.mu)))
        .collect();
    Ok(AttackTarget {
        rm1,
        rm2,
        lambda,
        thresholds,
        reference,
    })
}

pub fn select_attack(samples: Vec<AdvSample>, selection: Selection) -> Option<AdvSample> {
    let by_u = |a: &AdvSample, b: &AdvSample| a.u.total_cmp(&b.u);
    let any_pass = samples.iter().any(|s| s.passed_filter);
    samples
        .into_iter()
        .filter(|s| selection == Selection::HighestU || !any_pass || s.passed_filter)
        .max_by(by_u)
}

/// Samples `per_prompt` responses per prompt from `policy`, keeps one per
/// prompt by `selection` and judges it against the SFT references.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy_attacks(
    policy: &PolicyNet,
    prompts: &[Prompt],
    target: &AttackTarget<'_>,
    gold: &GoldModel,
    refs: &PromptReferences,
    per_prompt: usize,
    selection: Selection,
    seed: u64,
) -> Result<Vec<(AdvSample, AttackVerdict)>> {
    if per_prompt == 0 {
        return Err(Error::config("need at least one attack per prompt"));
    }
    prompts
        .iter()
        .map(|p| {
            let mut rng = stream(seed, "eval/attack", p.id as u64);
            let samples = (0..per_prompt)
                .map(|_| target.sample(p, &policy.sample(p, &mut rng).response, gold, 0))
                .collect::<Result<Vec<_>>>()?;
            let best = select_attack(samples, selection).expect("per_prompt >= 1");
            let verdict = refs.judge(p, &best.response, target.rm1, gold)?;
            Ok((best, verdict))
        })
        .collect()
}

/// Judges one fixed response per prompt.
pub fn judge_responses(
    prompts: &[Prompt],
    responses: &[Response],
    rm1: &dyn Scorer,
    gold: &dyn Scorer,
    refs: &PromptReferences,
) -> Result<Vec<AttackVerdict>> {
    if prompts.len() != responses.len() {
        return Err(Error::config("one response per prompt expected"));
    }
    prompts
        .iter()
        .zip(responses)
        .map(|(p, r)| refs.judge(p, r, rm1, gold))
        .collect()
}
