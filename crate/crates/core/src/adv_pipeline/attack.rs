use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy_rl::{train_policy, PolicyNet, RlConfig, RolloutView, StepMetrics, TrainHooks};
use crate::reward_model::{
    param_digest, uncertainty_zscore, weighted_diff, AdvFields, PairSource, PreferencePair,
    RewardNet, UncertaintyReference,
};
use crate::rng::{derive_seed, stream};
use crate::scoring::{mean, Sample, Scorer};
use crate::synth_env::{GoldModel, Prompt, Response, World};

/// Z-score an attack's disagreement must exceed to count as out of distribution.
pub const Z_CUTOFF: f64 = 1.96;

/// Default grid for the weight on the second reward model.
pub const LAMBDA_GRID: [f64; 3] = [8.0, 10.0, 12.0];

/// Fresh SFT responses an adversarial pair may draw before giving up on a prompt.
pub const MAX_CHOSEN_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Reward `r1 + C` whenever `r1 <= T(x)`.
    Constrained,
    /// Always reward `r1 - lambda * r2`.
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub lambda: f64,
    /// Added to `r1` on the penalty branch.
    pub penalty: f64,
    pub threshold_mode: ThresholdMode,
    /// Rollouts of every `collect_every`-th step become candidates.
    pub collect_every: usize,
    pub pair_budget: usize,
    /// SFT responses per prompt behind `T(x)`.
    pub threshold_samples: usize,
    /// Off means every candidate is kept and attacks are chosen by disagreement alone.
    pub filtering: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            penalty: -25.0,
            threshold_mode: ThresholdMode::Constrained,
            collect_every: 1,
            pair_budget: 1000,
            threshold_samples: 32,
            filtering: true,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("attack lambda must be > 0"));
        }
        if !(self.penalty < 0.0 && self.penalty.is_finite()) {
            return Err(Error::config("attack penalty must be negative"));
        }
        if self.collect_every == 0 {
            return Err(Error::config("collect_every must be >= 1"));
        }
        if self.threshold_samples < 8 {
            return Err(Error::config("threshold_samples must be >= 8"));
        }
        Ok(())
    }
}

/// Memoised `T(x)` values keyed by prompt and target-model digest.
#[derive(Debug, Default, Clone)]
pub struct ThresholdCache {
    values: HashMap<(usize, u64), f64>,
    sampled: usize,
}

impl ThresholdCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Total SFT responses drawn so far; unchanged on cache hits.
    pub fn sampled(&self) -> usize {
        self.sampled
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean normalized `rm1` score of `n_samples` fresh SFT responses to `prompt`.
    pub fn threshold_t(
        &mut self,
        prompt: &Prompt,
        sft: &PolicyNet,
        rm1: &RewardNet,
        n_samples: usize,
        seed: u64,
    ) -> Result<f64> {
        if n_samples < 8 {
            return Err(Error::config("T(x) needs at least 8 SFT samples"));
        }
        if !rm1.is_calibrated() {
            return Err(Error::state("T(x) needs a calibrated reward model"));
        }
        let key = (prompt.id, rm_digest(rm1));
        if let Some(&t) = self.values.get(&key) {
            return Ok(t);
        }
        let mut rng = stream(
            derive_seed(seed, "adv/threshold", key.1),
            "prompt",
            prompt.id as u64,
        );
        let scores = sft
            .sample_n(prompt, n_samples, &mut rng)
            .iter()
            .map(|r| rm1.score(prompt, r, true))
            .collect::<Result<Vec<_>>>()?;
        self.sampled += n_samples;
        let t = mean(&scores);
        self.values.insert(key, t);
        Ok(t)
    }
}

/// Identity of a trained, calibrated reward model.
pub fn rm_digest(rm: &RewardNet) -> u64 {
    let norm = rm
        .norm()
        .map_or((0, 0), |n| (n.mu.to_bits(), n.sigma.to_bits()));
    derive_seed(param_digest(rm.params()) ^ norm.0, "rm/digest", norm.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Attack,
    Penalty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvReward {
    pub value: f64,
    pub r1: f64,
    pub r2: f64,
    pub branch: Branch,
}

/// The piecewise attack reward on already-normalized scores.
pub fn adv_reward_from_scores(r1: f64, r2: f64, t: f64, config: &AttackConfig) -> AdvReward {
    let attack = config.threshold_mode == ThresholdMode::Disabled || r1 > t;
    let (value, branch) = if attack {
        (weighted_diff(r1, r2, config.lambda), Branch::Attack)
    } else {
        (r1 + config.penalty, Branch::Penalty)
    };
    AdvReward {
        value,
        r1,
        r2,
        branch,
    }
}

pub fn adv_reward(
    prompt: &Prompt,
    response: &Response,
    rm1: &RewardNet,
    rm2: &RewardNet,
    t: f64,
    config: &AttackConfig,
) -> Result<AdvReward> {
    let r1 = rm1.score(prompt, response, true)?;
    let r2 = rm2.score(prompt, response, true)?;
    Ok(adv_reward_from_scores(r1, r2, t, config))
}

/// One scored attack candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvSample {
    pub prompt_id: usize,
    pub response: Response,
    pub step: usize,
    pub r1: f64,
    pub r2: f64,
    pub u: f64,
    pub z: f64,
    pub threshold: f64,
    /// Normalized gold score, for diagnostics only.
    pub gold: f64,
    pub passed_filter: bool,
}

impl AdvSample {
    pub fn meets_filter(&self) -> bool {
        self.r1 > self.threshold && self.z > Z_CUTOFF
    }
}

/// Weighted disagreement statistics over SFT reference samples.
pub fn disagreement_reference(
    rm1: &RewardNet,
    rm2: &RewardNet,
    lambda: f64,
    reference: &[Sample],
) -> Result<UncertaintyReference> {
    let us = reference
        .iter()
        .map(|s| {
            let r1 = rm1.score(&s.prompt, &s.response, true)?;
            let r2 = rm2.score(&s.prompt, &s.response, true)?;
            Ok(weighted_diff(r1, r2, lambda))
        })
        .collect::<Result<Vec<_>>>()?;
    UncertaintyReference::from_values(&us)
}

/// Both target models with everything needed to score attacks against them.
#[derive(Debug, Clone)]
pub struct AttackTarget<'a> {
    pub rm1: &'a RewardNet,
    pub rm2: &'a RewardNet,
    pub lambda: f64,
    pub thresholds: BTreeMap<usize, f64>,
    pub reference: UncertaintyReference,
}

impl<'a> AttackTarget<'a> {
    /// Computes `T(x)` for every prompt and the SFT disagreement reference.
    #[allow(clippy::too_many_arguments)]
    pub fn prepare(
        rm1: &'a RewardNet,
        rm2: &'a RewardNet,
        lambda: f64,
        sft: &PolicyNet,
        prompts: &[Prompt],
        reference: &[Sample],
        threshold_samples: usize,
        cache: &mut ThresholdCache,
        seed: u64,
    ) -> Result<Self> {
        let thresholds = prompts
            .iter()
            .map(|p| {
                Ok((
                    p.id,
                    cache.threshold_t(p, sft, rm1, threshold_samples, seed)?,
                ))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self {
            rm1,
            rm2,
            lambda,
            thresholds,
            reference: disagreement_reference(rm1, rm2, lambda, reference)?,
        })
    }

    pub fn threshold(&self, prompt_id: usize) -> Result<f64> {
        self.thresholds
            .get(&prompt_id)
            .copied()
            .ok_or_else(|| Error::state(format!("no threshold computed for prompt {prompt_id}")))
    }

    pub fn sample(
        &self,
        prompt: &Prompt,
        response: &Response,
        gold: &GoldModel,
        step: usize,
    ) -> Result<AdvSample> {
        let r1 = self.rm1.score(prompt, response, true)?;
        let r2 = self.rm2.score(prompt, response, true)?;
        let u = weighted_diff(r1, r2, self.lambda);
        let z = uncertainty_zscore(u, &self.reference)?;
        let threshold = self.threshold(prompt.id)?;
        let mut s = AdvSample {
            prompt_id: prompt.id,
            response: response.clone(),
            step,
            r1,
            r2,
            u,
            z,
            threshold,
            gold: gold.score(prompt, response, true)?,
            passed_filter: false,
        };
        s.passed_filter = s.meets_filter();
        Ok(s)
    }
}

/// Tracks whether every penalty value stays below every attack value per prompt.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DominanceCheck {
    min_attack: BTreeMap<usize, f64>,
    max_penalty: BTreeMap<usize, f64>,
}

impl DominanceCheck {
    pub fn record(&mut self, prompt_id: usize, reward: &AdvReward) {
        let (map, better): (_, fn(f64, f64) -> bool) = match reward.branch {
            Branch::Attack => (&mut self.min_attack, |new, old| new < old),
            Branch::Penalty => (&mut self.max_penalty, |new, old| new > old),
        };
        let slot = map.entry(prompt_id).or_insert(reward.value);
        if better(reward.value, *slot) {
            *slot = reward.value;
        }
    }

    /// Prompts on which some penalty value reached an attack value.
    pub fn violations(&self) -> Vec<usize> {
        self.max_penalty
            .iter()
            .filter(|(id, pen)| self.min_attack.get(id).is_some_and(|att| **pen >= *att))
            .map(|(id, _)| *id)
            .collect()
    }
}

/// Adversarial policy plus every candidate it produced.
#[derive(Debug, Clone)]
pub struct AttackRun {
    pub policy: PolicyNet,
    pub candidates: Vec<AdvSample>,
    pub trace: Vec<StepMetrics>,
    pub dominance_violations: Vec<usize>,
}

/// RL against the attack reward, starting from a copy of the SFT policy.
pub fn train_adversarial_policy(
    world: &World,
    sft: &PolicyNet,
    target: &AttackTarget<'_>,
    rl: &RlConfig,
    config: &AttackConfig,
    seed: u64,
) -> Result<AttackRun> {
    config.validate()?;
    let mut policy = sft.clone();
    let prompts = &world.train_prompts;
    for p in prompts {
        target.threshold(p.id)?;
    }
    let dominance = std::cell::RefCell::new(DominanceCheck::default());
    let reward_fn = |prompt: &Prompt, response: &Response| -> f64 {
        let t = target.thresholds[&prompt.id];
        match adv_reward(prompt, response, target.rm1, target.rm2, t, config) {
            Ok(r) => {
                dominance.borrow_mut().record(prompt.id, &r);
                r.value
            }
            Err(_) => f64::NAN,
        }
    };
    let mut candidates = Vec::new();
    let mut failure: Option<Error> = None;
    let mut collect = |view: &RolloutView<'_>| {
        if view.step % config.collect_every != 0 || failure.is_some() {
            return;
        }
        match target.sample(view.prompt, view.response, &world.gold, view.step) {
            Ok(s) => candidates.push(s),
            Err(e) => failure = Some(e),
        }
    };
    let trace = train_policy(
        &mut policy,
        &reward_fn,
        prompts,
        rl,
        derive_seed(seed, "adv/policy", 0),
        TrainHooks {
            gold: Some(&world.gold),
            on_rollout: Some(&mut collect),
            on_step: None,
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    let dominance_violations = dominance.into_inner().violations();
    if !dominance_violations.is_empty() && config.threshold_mode == ThresholdMode::Constrained {
        warn!(
            "penalty {} does not keep the penalty branch below the attack branch on {} prompts",
            config.penalty,
            dominance_violations.len()
        );
    }
    info!(
        "adversarial policy: {} candidates, {} pass the filter",
        candidates.len(),
        candidates.iter().filter(|c| c.passed_filter).count()
    );
    Ok(AttackRun {
        policy,
        candidates,
        trace,
        dominance_violations,
    })
}

/// Deduplicated candidates, sorted by `(prompt_id, z)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdvDataset {
    pub samples: Vec<AdvSample>,
    /// Whether the filter predicates were enforced.
    pub filtered: bool,
}

impl AdvDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.samples
            .iter()
            .map(|s| serde_json::to_string(s).expect("sample serializes") + "\n")
            .collect()
    }
}

/// Keeps samples with `r1 > T(x)` and `z > 1.96` (all samples when
/// `filtering` is off), dropping exact duplicates in favour of the higher `z`.
pub fn filter_candidates(stream: &[AdvSample], filtering: bool) -> Result<AdvDataset> {
    let mut best: BTreeMap<(usize, &[u16]), &AdvSample> = BTreeMap::new();
    for s in stream {
        if s.passed_filter != s.meets_filter() {
            return Err(Error::state(format!(
                "candidate on prompt {} carries a stale filter flag",
                s.prompt_id
            )));
        }
        if filtering && !s.meets_filter() {
            continue;
        }
        let slot = best.entry((s.prompt_id, &s.response.tokens)).or_insert(s);
        if s.z > slot.z {
            *slot = s;
        }
    }
    let mut samples: Vec<AdvSample> = best.into_values().cloned().collect();
    samples.sort_by(|a, b| a.prompt_id.cmp(&b.prompt_id).then(a.z.total_cmp(&b.z)));
    if samples.is_empty() {
        return Err(Error::AttackFailed("no candidate passed the filter".into()));
    }
    Ok(AdvDataset {
        samples,
        filtered: filtering,
    })
}

/// SFT-preferred pairs against the highest-`z` filtered attacks.
pub fn build_adv_pairs(
    adv: &AdvDataset,
    world: &World,
    sft: &PolicyNet,
    target: &AttackTarget<'_>,
    budget: usize,
    seed: u64,
) -> Result<Vec<PreferencePair>> {
    if !adv.filtered {
        return Err(Error::config(
            "adversarial pairs need a filtered candidate set",
        ));
    }
    let mut order: Vec<&AdvSample> = adv.samples.iter().collect();
    order.sort_by(|a, b| {
        b.z.total_cmp(&a.z)
            .then(a.prompt_id.cmp(&b.prompt_id))
            .then(a.response.cmp(&b.response))
    });
    let mut pairs = Vec::with_capacity(budget.min(order.len()));
    let mut dropped = BTreeSet::new();
    for (i, s) in order.into_iter().enumerate() {
        if pairs.len() >= budget {
            break;
        }
        assert!(
            s.meets_filter(),
            "unfiltered sample reached pair construction"
        );
        let prompt = world
            .prompt(s.prompt_id)
            .ok_or_else(|| Error::config(format!("unknown prompt id {}", s.prompt_id)))?;
        let t = target.threshold(prompt.id)?;
        let mut rng = stream(seed, "adv/chosen", i as u64);
        let mut chosen = None;
        for _ in 0..MAX_CHOSEN_ATTEMPTS {
            let y = sft.sample(prompt, &mut rng).response;
            if target.rm1.score(prompt, &y, true)? > t {
                chosen = Some(y);
                break;
            }
        }
        let Some(chosen) = chosen else {
            dropped.insert(prompt.id);
            continue;
        };
        pairs.push(PreferencePair {
            prompt_id: prompt.id,
            gold_chosen: world.gold.raw_score(prompt, &chosen),
            gold_rejected: world.gold.raw_score(prompt, &s.response),
            chosen,
            rejected: s.response.clone(),
            source: PairSource::Adversarial,
            adv: Some(AdvFields {
                r1: s.r1,
                r2: s.r2,
                u: s.u,
                z: s.z,
            }),
        });
    }
    if !dropped.is_empty() {
        warn!(
            "no SFT response above T(x) after {MAX_CHOSEN_ATTEMPTS} draws on {} prompts",
            dropped.len()
        );
    }
    Ok(pairs)
}

/// Mean of a field over a window of steps, for trend diagnostics.
pub fn windowed_means(
    samples: &[AdvSample],
    window: usize,
    field: fn(&AdvSample) -> f64,
) -> Vec<f64> {
    let Some(last) = samples.iter().map(|s| s.step).max() else {
        return Vec::new();
    };
    let window = window.max(1);
    let mut sums = vec![(0.0, 0usize); last / window + 1];
    for s in samples {
        let slot = &mut sums[s.step / window];
        slot.0 += field(s);
        slot.1 += 1;
    }
    sums.into_iter()
        .filter(|(_, n)| *n > 0)
        .map(|(s, n)| s / n as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(r1: f64, z: f64, t: f64, tokens: Vec<u16>) -> AdvSample {
        let mut s = AdvSample {
            prompt_id: 0,
            response: Response::new(tokens),
            step: 0,
            r1,
            r2: 0.0,
            u: 0.0,
            z,
            threshold: t,
            gold: 0.0,
            passed_filter: false,
        };
        s.passed_filter = s.meets_filter();
        s
    }

    #[test]
    fn reward_branches() {
        let cfg = AttackConfig::default();
        let a = adv_reward_from_scores(0.5, 0.2, 0.0, &cfg);
        assert_eq!(a.branch, Branch::Attack);
        assert!((a.value + 1.5).abs() < 1e-12);
        let p = adv_reward_from_scores(-0.1, 0.2, 0.0, &cfg);
        assert_eq!(p.branch, Branch::Penalty);
        assert!((p.value + 25.1).abs() < 1e-12);
        let off = AttackConfig {
            threshold_mode: ThresholdMode::Disabled,
            ..cfg
        };
        assert_eq!(
            adv_reward_from_scores(-0.1, 0.2, 0.0, &off).branch,
            Branch::Attack
        );
    }

    #[test]
    fn boundary_goes_to_penalty() {
        let r = adv_reward_from_scores(0.0, 0.0, 0.0, &AttackConfig::default());
        assert_eq!(r.branch, Branch::Penalty);
    }

    #[test]
    fn filter_predicates() {
        let s = [
            sample(0.4, 1.5, 0.0, vec![1]),
            sample(-0.2, 3.0, 0.0, vec![2]),
            sample(0.4, 2.5, 0.0, vec![3]),
        ];
        let kept = filter_candidates(&s, true).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept.samples[0].response.tokens, vec![3]);
        assert_eq!(filter_candidates(&s, false).unwrap().len(), 3);
        assert!(matches!(
            filter_candidates(&s[..2], true),
            Err(Error::AttackFailed(_))
        ));
    }

    #[test]
    fn filter_dedups_keeping_higher_z() {
        let s = [
            sample(1.0, 2.5, 0.0, vec![4, 4]),
            sample(1.0, 3.5, 0.0, vec![4, 4]),
        ];
        let kept = filter_candidates(&s, true).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept.samples[0].z, 3.5);
    }

    #[test]
    fn stale_flag_is_rejected() {
        let mut s = sample(1.0, 2.5, 0.0, vec![1]);
        s.passed_filter = false;
        assert!(filter_candidates(&[s], true).is_err());
    }

    #[test]
    fn dominance_tracking() {
        let mut d = DominanceCheck::default();
        let cfg = AttackConfig::default();
        d.record(0, &adv_reward_from_scores(0.5, 0.2, 0.0, &cfg));
        d.record(0, &adv_reward_from_scores(-0.5, 0.2, 0.0, &cfg));
        assert!(d.violations().is_empty());
        d.record(1, &adv_reward_from_scores(0.5, 3.0, 0.0, &cfg));
        d.record(1, &adv_reward_from_scores(-0.5, 0.0, 0.0, &cfg));
        assert_eq!(d.violations(), vec![1]);
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig::default().validate().is_ok());
        for bad in [
            AttackConfig {
                lambda: 0.0,
                ..Default::default()
            },
            AttackConfig {
                penalty: 1.0,
                ..Default::default()
            },
            AttackConfig {
                threshold_samples: 4,
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
