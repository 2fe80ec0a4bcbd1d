//! Behaviour-cloned SFT policy: best-of-N filtering of uniformly random
//! responses by gold score, then maximum-likelihood fitting.

use log::debug;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Prompt, Response, Token, World, END_TOKEN};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, categorical_sample, AdamConfig, Gradients};
use crate::policy_rl::{PolicyNet, PolicySpec};
use crate::rng::{stream, Rng};
use crate::scoring::{Sample, Scorer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    /// Random candidates drawn per training prompt.
    pub candidates_per_prompt: usize,
    /// Fraction of candidates (by gold score) kept for cloning.
    pub keep_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub embed: usize,
    pub hidden: usize,
    pub decay: f64,
    /// Sharpness of the demonstration proposal; 0 means uniform random tokens.
    pub proposal_sharpness: f64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            candidates_per_prompt: 64,
            keep_fraction: 0.25,
            epochs: 6,
            batch_size: 64,
            lr: 3e-3,
            embed: 12,
            hidden: 48,
            decay: 0.6,
            proposal_sharpness: 2.0,
        }
    }
}

impl SftConfig {
    pub fn policy_spec(&self, world: &World) -> PolicySpec {
        PolicySpec {
            vocab: world.vocab(),
            max_len: world.max_len(),
            embed: self.embed,
            hidden: self.hidden,
            decay: self.decay,
            end_token: Some(END_TOKEN),
            temperature: 1.0,
        }
    }
}

/// Uniform length in `1..=max_len`, uniform content tokens.
pub fn random_response(vocab: usize, max_len: usize, rng: &mut Rng) -> Response {
    let len = rng.random_range(1..=max_len);
    Response::new(
        (0..len)
            .map(|_| rng.random_range(1..vocab) as Token)
            .collect(),
    )
}

/// Demonstration-like response: a Markov chain whose transitions favour
/// fluent bigrams and good tokens, with uniform length in `1..=max_len`.
/// Demonstrations never repeat a token back to back or use it more than twice.
pub fn proposal_response(world: &World, sharpness: f64, rng: &mut Rng) -> Response {
    let v = world.vocab();
    let len = rng.random_range(1..=world.max_len());
    let mut tokens: Vec<Token> = Vec::with_capacity(len);
    let mut logits = vec![0.0; v - 1];
    let mut counts = vec![0usize; v];
    for _ in 0..len {
        for (i, l) in logits.iter_mut().enumerate() {
            let t = (i + 1) as Token;
            let prev = tokens.last().copied();
            *l = if prev == Some(t) || counts[t as usize] >= 2 {
                f64::NEG_INFINITY
            } else {
                let fluency = prev.map_or(0.0, |p| world.gold.bigram_score(p, t));
                sharpness * (fluency + world.gold.token_quality(t))
            };
        }
        let Ok((i, _)) = categorical_sample(&logits, 1.0, rng) else {
            break;
        };
        tokens.push((i + 1) as Token);
        counts[i + 1] += 1;
    }
    Response::new(tokens)
}

pub fn make_sft_policy(world: &World, config: &SftConfig, seed: u64) -> Result<PolicyNet> {
    if config.candidates_per_prompt < 8 {
        return Err(Error::config(
            "SFT cloning needs at least 8 candidates per prompt",
        ));
    }
    if !(config.keep_fraction > 0.0 && config.keep_fraction <= 1.0) {
        return Err(Error::config("keep_fraction must lie in (0, 1]"));
    }
    let keep =
        ((config.candidates_per_prompt as f64 * config.keep_fraction).round() as usize).max(1);
    let mut demos: Vec<(&Prompt, Response)> = Vec::new();
    for prompt in &world.train_prompts {
        let mut rng = stream(seed, "sft/candidates", prompt.id as u64);
        let mut scored: Vec<(f64, Response)> = (0..config.candidates_per_prompt)
            .map(|_| {
                let r = if config.proposal_sharpness > 0.0 {
                    proposal_response(world, config.proposal_sharpness, &mut rng)
                } else {
                    random_response(world.vocab(), world.max_len(), &mut rng)
                };
                (world.gold.raw_score(prompt, &r), r)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        demos.extend(scored.into_iter().take(keep).map(|(_, r)| (prompt, r)));
    }

    let spec = config.policy_spec(world);
    let mut policy = PolicyNet::random(spec, &mut stream(seed, "sft/init", 0))?;
    let adam = AdamConfig::with_lr(config.lr);
    let mut order: Vec<usize> = (0..demos.len()).collect();
    let mut grads = Gradients::zeros_like(policy.params());
    for epoch in 0..config.epochs {
        order.shuffle(&mut stream(seed, "sft/shuffle", epoch as u64));
        let mut nll = 0.0;
        for batch in order.chunks(config.batch_size.max(1)) {
            grads.fill_zero();
            let w = -1.0 / batch.len() as f64;
            for &i in batch {
                let (prompt, response) = &demos[i];
                nll -= policy.accumulate_log_prob_grad(prompt, response, w, &mut grads)?;
            }
            adam_step(policy.params_mut(), &grads, &adam)?;
        }
        debug!(
            "sft epoch {epoch}: mean nll {:.4}",
            nll / demos.len() as f64
        );
    }
    policy.freeze_as_anchor();
    Ok(policy)
}

/// `n` fresh SFT responses on prompts drawn uniformly from `prompts`.
pub fn reference_samples(sft: &PolicyNet, prompts: &[Prompt], n: usize, seed: u64) -> Vec<Sample> {
    if prompts.is_empty() {
        return Vec::new();
    }
    let mut rng = stream(seed, "sft/reference", 0);
    (0..n)
        .map(|_| {
            let prompt = &prompts[rng.random_range(0..prompts.len())];
            Sample {
                prompt: prompt.clone(),
                response: sft.sample(prompt, &mut rng).response,
            }
        })
        .collect()
}
