use log::{debug, warn};
use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use super::policy::PolicyNet;
use super::rloo::{kl_penalized_reward, rloo_advantages};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamConfig, Gradients};
use crate::rng::{derive_seed, stream};
use crate::scoring::Scorer;
use crate::synth_env::{Prompt, Response};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub kl_beta: f64,
    pub lr: f64,
    /// Prompts per optimisation step.
    pub batch_size: usize,
    /// Responses sampled per prompt.
    pub samples_per_prompt: usize,
    pub temperature: f64,
    pub max_steps: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            kl_beta: 0.05,
            lr: 1e-3,
            batch_size: 64,
            samples_per_prompt: 4,
            temperature: 1.0,
            max_steps: 150,
        }
    }
}

impl RlConfig {
    /// Learning rate used for billion-parameter policies; far too small here.
    pub const LARGE_MODEL_LR: f64 = 5e-7;

    pub fn validate(&self) -> Result<()> {
        if !(self.kl_beta >= 0.0) {
            return Err(Error::config("kl_beta must be >= 0"));
        }
        if self.samples_per_prompt < 2 {
            return Err(Error::config(
                "samples_per_prompt must be >= 2 for leave-one-out",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature must be > 0"));
        }
        AdamConfig::with_lr(self.lr).validate()
    }
}

/// Scalar reward over the response space.
pub trait RewardFn {
    fn reward(&self, prompt: &Prompt, response: &Response) -> f64;
}

impl<F> RewardFn for F
where
    F: Fn(&Prompt, &Response) -> f64,
{
    fn reward(&self, prompt: &Prompt, response: &Response) -> f64 {
        self(prompt, response)
    }
}

/// Per-step training metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_train_reward: f64,
    pub mean_gold_reward: f64,
    pub mean_length: f64,
    pub mean_kl: f64,
}

/// One rollout as seen by observers.
#[derive(Debug, Clone, Copy)]
pub struct RolloutView<'a> {
    pub step: usize,
    pub prompt: &'a Prompt,
    pub response: &'a Response,
    pub reward: f64,
    pub gold: Option<f64>,
}

/// Optional side channels of [`train_policy`].
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Scores every rollout for the gold metric (normalized when calibrated).
    pub gold: Option<&'a dyn Scorer>,
    /// Sees every rollout, in deterministic order.
    pub on_rollout: Option<&'a mut dyn FnMut(&RolloutView<'_>)>,
    /// Called after each optimizer step.
    pub on_step: Option<&'a mut dyn FnMut(&StepMetrics, &PolicyNet)>,
}

/// Continuation point for [`train_policy_from`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StartAt(pub usize);

/// RLOO with a sequence-level KL penalty folded into the reward.
pub fn train_policy(
    policy: &mut PolicyNet,
    reward_fn: &dyn RewardFn,
    prompts: &[Prompt],
    config: &RlConfig,
    seed: u64,
    hooks: TrainHooks<'_>,
) -> Result<Vec<StepMetrics>> {
    train_policy_from(policy, reward_fn, prompts, config, seed, StartAt(0), hooks)
}

/// Runs steps `start..config.max_steps`; randomness of step `s` depends only on `(seed, s)`.
pub fn train_policy_from(
    policy: &mut PolicyNet,
    reward_fn: &dyn RewardFn,
    prompts: &[Prompt],
    config: &RlConfig,
    seed: u64,
    start: StartAt,
    mut hooks: TrainHooks<'_>,
) -> Result<Vec<StepMetrics>> {
    config.validate()?;
    if prompts.is_empty() {
        return Err(Error::config("policy training needs at least one prompt"));
    }
    if policy.spec().temperature != config.temperature {
        return Err(Error::config(
            "policy temperature differs from the RL config temperature",
        ));
    }
    let adam = AdamConfig::with_lr(config.lr);
    let k = config.samples_per_prompt;
    let batch = config.batch_size.min(prompts.len());
    let mut grads = Gradients::zeros_like(policy.params());
    let mut trace = Vec::with_capacity(config.max_steps.saturating_sub(start.0));
    let mut last_good = policy.params().clone();

    for step in start.0..config.max_steps {
        grads.fill_zero();
        let chosen = sample_indices(
            &mut stream(seed, "rl/batch", step as u64),
            prompts.len(),
            batch,
        );
        let weight = -1.0 / (batch * k) as f64;
        let (mut sum_reward, mut sum_gold, mut sum_len, mut sum_kl) = (0.0, 0.0, 0.0, 0.0);
        let mut failure: Option<String> = None;

        for (b, pi) in chosen.iter().enumerate() {
            let prompt = &prompts[pi];
            let mut rng = stream(
                derive_seed(seed, "rl/rollout", step as u64),
                "prompt",
                b as u64,
            );
            let mut responses = Vec::with_capacity(k);
            let mut penalized = Vec::with_capacity(k);
            for _ in 0..k {
                let rollout = policy.sample(prompt, &mut rng);
                let anchor_lp = policy.anchor_log_prob(prompt, &rollout.response)?;
                let reward = reward_fn.reward(prompt, &rollout.response);
                let gold = hooks
                    .gold
                    .map(|g| {
                        let normalized = g.norm().is_some();
                        g.score(prompt, &rollout.response, normalized)
                    })
                    .transpose()?;
                let kl = policy.path_kl(prompt, &rollout.response)?;
                let value =
                    kl_penalized_reward(reward, rollout.log_prob, anchor_lp, config.kl_beta);
                if !value.is_finite() || !kl.is_finite() {
                    failure = Some(format!("non-finite reward {reward} / kl {kl}"));
                }
                if let Some(cb) = hooks.on_rollout.as_mut() {
                    cb(&RolloutView {
                        step,
                        prompt,
                        response: &rollout.response,
                        reward,
                        gold,
                    });
                }
                sum_reward += reward;
                sum_gold += gold.unwrap_or(0.0);
                sum_len += rollout.response.len() as f64;
                sum_kl += kl;
                penalized.push(value);
                responses.push(rollout.response);
            }
            if failure.is_some() {
                break;
            }
            let adv = rloo_advantages(&penalized)?;
            for (response, a) in responses.iter().zip(&adv) {
                policy.accumulate_log_prob_grad(prompt, response, weight * a, &mut grads)?;
            }
        }

        if failure.is_none() && !grads.is_finite() {
            failure = Some("non-finite policy gradient".to_string());
        }
        if failure.is_none() {
            adam_step(policy.params_mut(), &grads, &adam)?;
            if !policy.params().is_finite() {
                failure = Some("non-finite parameters after update".to_string());
            }
        }
        if let Some(reason) = failure {
            warn!("policy training diverged at step {step}: {reason}");
            policy.params_mut().copy_values_from(&last_good)?;
            return Err(Error::Diverged {
                step,
                last_good: step.saturating_sub(1),
            });
        }
        last_good.copy_values_from(policy.params())?;

        let n = (batch * k) as f64;
        let metrics = StepMetrics {
            step,
            mean_train_reward: sum_reward / n,
            mean_gold_reward: sum_gold / n,
            mean_length: sum_len / n,
            mean_kl: sum_kl / n,
        };
        debug!(
            "rl step {step}: reward {:.3} gold {:.3} len {:.2} kl {:.3}",
            metrics.mean_train_reward,
            metrics.mean_gold_reward,
            metrics.mean_length,
            metrics.mean_kl
        );
        if let Some(cb) = hooks.on_step.as_mut() {
            cb(&metrics, policy);
        }
        trace.push(metrics);
    }
    Ok(trace)
}

/// Line-delimited JSON rendering of a metric trace.
pub fn trace_to_jsonl(trace: &[StepMetrics]) -> String {
    trace
        .iter()
        .map(|m| serde_json::to_string(m).expect("metrics serialize") + "\n")
        .collect()
}
