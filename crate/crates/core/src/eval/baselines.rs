use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy_rl::{
    train_policy, train_policy_from, PolicyNet, RlConfig, StartAt, StepMetrics, TrainHooks,
};
use crate::reward_model::{PairSource, PreferenceDataset, PreferencePair, RewardNet};
use crate::rng::stream;
use crate::scoring::{mean_std, Scorer};
use crate::synth_env::{Prompt, Response, Token, World};

/// Default grid for the ensemble penalty weight.
pub const ENSEMBLE_LAMBDA_GRID: [f64; 3] = [0.1, 0.5, 1.0];

/// Allowed augmentation multipliers.
pub const RRM_MULTIPLIERS: [usize; 3] = [2, 3, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    Mean,
    MeanMinusStd,
}

/// Mean normalized member score, optionally minus `lambda` times their std.
pub fn ensemble_objective(
    members: &[&RewardNet],
    prompt: &Prompt,
    response: &Response,
    mode: EnsembleMode,
    lambda: f64,
) -> Result<f64> {
    if members.len() < 2 {
        return Err(Error::config(
            "ensemble objective needs at least two members",
        ));
    }
    let scores = members
        .iter()
        .map(|m| m.score(prompt, response, true))
        .collect::<Result<Vec<_>>>()?;
    Ok(ensemble_of_scores(&scores, mode, lambda))
}

pub fn ensemble_of_scores(scores: &[f64], mode: EnsembleMode, lambda: f64) -> f64 {
    let (m, s) = mean_std(scores);
    match mode {
        EnsembleMode::Mean => m,
        EnsembleMode::MeanMinusStd => m - lambda * s,
    }
}

/// Adds `multiplier - 1` copies of each pair whose rejected side is a response
/// lifted from a different prompt.
pub fn rrm_augment(
    dataset: &PreferenceDataset,
    multiplier: usize,
    world: &World,
    seed: u64,
) -> Result<PreferenceDataset> {
    if !RRM_MULTIPLIERS.contains(&multiplier) {
        return Err(Error::config(format!(
            "rrm multiplier must be one of {RRM_MULTIPLIERS:?}"
        )));
    }
    let pairs = &dataset.pairs;
    let first = pairs
        .first()
        .ok_or_else(|| Error::config("cannot augment an empty dataset"))?
        .prompt_id;
    if pairs.iter().all(|p| p.prompt_id == first) {
        return Err(Error::config(
            "augmentation needs pairs from at least two prompts",
        ));
    }
    let mut rng = stream(seed, "rrm/augment", multiplier as u64);
    let mut out = pairs.clone();
    for _ in 1..multiplier {
        for p in pairs {
            let foreign = loop {
                let q = &pairs[rng.random_range(0..pairs.len())];
                if q.prompt_id != p.prompt_id {
                    break if rng.random_bool(0.5) {
                        &q.chosen
                    } else {
                        &q.rejected
                    };
                }
            };
            let prompt = world
                .prompt(p.prompt_id)
                .ok_or_else(|| Error::config(format!("unknown prompt id {}", p.prompt_id)))?;
            out.push(PreferencePair {
                prompt_id: p.prompt_id,
                chosen: p.chosen.clone(),
                rejected: foreign.clone(),
                source: PairSource::RrmAugmented,
                gold_chosen: p.gold_chosen,
                gold_rejected: world.gold.raw_score(prompt, foreign),
                adv: None,
            });
        }
    }
    Ok(PreferenceDataset::new(out))
}

#[derive(Debug, Clone)]
pub struct OverOptimization {
    pub steps: usize,
    pub policy: PolicyNet,
    pub trace: Vec<StepMetrics>,
}

/// Trains against `rm1` for three times the steps that reached peak gold.
///
/// With `resume` set to the final policy and trace of an earlier run against
/// the same target under the same `seed`, only the missing steps are trained.
#[allow(clippy::too_many_arguments)]
pub fn overoptimization_attack(
    world: &World,
    start: &PolicyNet,
    rm1: &RewardNet,
    rl: &RlConfig,
    best_step: Option<usize>,
    resume: Option<(&PolicyNet, &[StepMetrics])>,
    seed: u64,
) -> Result<OverOptimization> {
    let best = best_step
        .ok_or_else(|| Error::state("over-optimization needs a recorded best-gold step"))?;
    if !rm1.is_calibrated() {
        return Err(Error::state("over-optimization target must be calibrated"));
    }
    let steps = 3 * (best + 1);
    let config = RlConfig {
        max_steps: steps,
        ..rl.clone()
    };
    let reward = |p: &Prompt, r: &Response| rm1.score(p, r, true).unwrap_or(f64::NAN);
    let hooks = || TrainHooks {
        gold: Some(&world.gold),
        ..Default::default()
    };
    if let Some((policy, prefix)) = resume.filter(|(_, t)| t.len() < steps) {
        let mut policy = policy.clone();
        let mut trace = prefix.to_vec();
        trace.extend(train_policy_from(
            &mut policy,
            &reward,
            &world.train_prompts,
            &config,
            seed,
            StartAt(prefix.len()),
            hooks(),
        )?);
        return Ok(OverOptimization {
            steps,
            policy,
            trace,
        });
    }
    let mut policy = start.clone();
    let trace = train_policy(
        &mut policy,
        &reward,
        &world.train_prompts,
        &config,
        seed,
        hooks(),
    )?;
    Ok(OverOptimization {
        steps,
        policy,
        trace,
    })
}

/// Best of `n_variants` random substitutions of at most `max_edits` tokens,
/// by raw `rm1` score; the original when no variant improves on it.
#[allow(clippy::too_many_arguments)]
pub fn token_perturbation_attack(
    prompt: &Prompt,
    response: &Response,
    rm1: &dyn Scorer,
    vocab: usize,
    n_variants: usize,
    max_edits: usize,
    seed: u64,
) -> Result<Response> {
    if response.is_empty() {
        return Err(Error::config("cannot perturb an empty response"));
    }
    if n_variants == 0 || max_edits == 0 || vocab < 3 {
        return Err(Error::config(
            "perturbation needs n_variants, max_edits >= 1 and vocab >= 3",
        ));
    }
    let mut rng = stream(seed, "eval/perturb", prompt.id as u64);
    let mut best = response.clone();
    let mut best_score = rm1.raw_score(prompt, response);
    let n = response.len();
    for _ in 0..n_variants {
        let edits = rng.random_range(1..=max_edits.min(n));
        let mut tokens = response.tokens.clone();
        for pos in sample_indices(&mut rng, n, edits) {
            let old = tokens[pos];
            tokens[pos] = loop {
                let t = rng.random_range(1..vocab) as Token;
                if t != old {
                    break t;
                }
            };
        }
        let candidate = Response::new(tokens);
        let s = rm1.raw_score(prompt, &candidate);
        if s > best_score {
            best_score = s;
            best = candidate;
        }
    }
    Ok(best)
}

pub fn edit_distance(a: &Response, b: &Response) -> usize {
    let common = a
        .tokens
        .iter()
        .zip(&b.tokens)
        .filter(|(x, y)| x != y)
        .count();
    common + a.len().abs_diff(b.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_examples() {
        assert_eq!(
            ensemble_of_scores(&[1.0, 3.0], EnsembleMode::Mean, 0.0),
            2.0
        );
        assert_eq!(
            ensemble_of_scores(&[1.0, 3.0], EnsembleMode::MeanMinusStd, 0.5),
            1.5
        );
    }

    #[test]
    fn edit_distance_counts_substitutions_and_length() {
        let a = Response::new(vec![1, 2, 3]);
        assert_eq!(edit_distance(&a, &a), 0);
        assert_eq!(edit_distance(&a, &Response::new(vec![1, 5, 3])), 1);
        assert_eq!(edit_distance(&a, &Response::new(vec![1, 2])), 1);
    }
}
