use std::collections::BTreeSet;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::attack::{
    build_adv_pairs, filter_candidates, train_adversarial_policy, AdvDataset, AttackConfig,
    AttackRun, AttackTarget, ThresholdCache,
};
use crate::error::{Error, Result};
use crate::policy_rl::{PolicyNet, RlConfig};
use crate::reward_model::{
    train_rm, PairSource, PreferenceDataset, PreferencePair, RewardNet, RmConfig,
};
use crate::rng::derive_seed;
use crate::scoring::Sample;
use crate::synth_env::World;

/// Highest round index that may be run.
pub const MAX_ROUNDS: usize = 2;

/// How ensemble members see the training pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleSplit {
    /// Every member trains on all pairs in its own shuffle order.
    Shared,
    /// Members train on disjoint parts of one seed-determined shuffle.
    Disjoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub size: usize,
    pub split: EnsembleSplit,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            size: 2,
            split: EnsembleSplit::Disjoint,
        }
    }
}

pub fn member_seed(seed: u64, round: usize, member: usize) -> u64 {
    derive_seed(seed, "rm/member", (round * 64 + member) as u64)
}

/// Trains `config.size` freshly initialised members on `dataset`.
pub fn train_ensemble(
    dataset: &PreferenceDataset,
    world: &World,
    rm: &RmConfig,
    config: &EnsembleConfig,
    reference: &[Sample],
    seed: u64,
    round: usize,
) -> Result<Vec<RewardNet>> {
    if config.size < 2 {
        return Err(Error::config("an ensemble needs at least two members"));
    }
    let parts = match config.split {
        EnsembleSplit::Shared => vec![dataset.clone(); config.size],
        EnsembleSplit::Disjoint => {
            dataset.split_disjoint(config.size, derive_seed(seed, "rm/split", round as u64))?
        }
    };
    parts
        .iter()
        .enumerate()
        .map(|(k, part)| {
            train_rm(
                part,
                world.features.clone(),
                world,
                rm,
                member_seed(seed, round, k),
                reference,
            )
        })
        .collect()
}

/// Summary of one adversarial round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub dataset_pairs: usize,
    pub adversarial_pairs_in: usize,
    pub candidates: usize,
    pub passed_filter: usize,
    pub retained: usize,
    pub pairs_built: usize,
    pub attack_failed: bool,
    pub dominance_violations: usize,
}

/// Everything produced by one round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub ensemble: Vec<RewardNet>,
    pub attack: AttackRun,
    pub retained: Option<AdvDataset>,
    pub new_pairs: Vec<PreferencePair>,
    pub report: RoundReport,
}

/// Fixed inputs shared by every round.
pub struct RoundSetup<'a> {
    pub world: &'a World,
    pub sft: &'a PolicyNet,
    pub reference: &'a [Sample],
    pub rm: &'a RmConfig,
    pub ensemble: &'a EnsembleConfig,
    pub attack_rl: &'a RlConfig,
    pub attack: &'a AttackConfig,
    pub seed: u64,
}

/// Attacks an already trained ensemble, filters the candidates and builds the
/// pairs that extend the next round's dataset.
pub fn attack_round(
    setup: &RoundSetup<'_>,
    ensemble: Vec<RewardNet>,
    dataset: &PreferenceDataset,
    round: usize,
    cache: &mut ThresholdCache,
) -> Result<RoundOutcome> {
    let round_seed = derive_seed(setup.seed, "round", round as u64);
    let target = AttackTarget::prepare(
        &ensemble[0],
        &ensemble[1],
        setup.attack.lambda,
        setup.sft,
        &setup.world.train_prompts,
        setup.reference,
        setup.attack.threshold_samples,
        cache,
        round_seed,
    )?;
    let attack = train_adversarial_policy(
        setup.world,
        setup.sft,
        &target,
        setup.attack_rl,
        setup.attack,
        round_seed,
    )?;
    let passed_filter = attack.candidates.iter().filter(|c| c.passed_filter).count();
    let (retained, new_pairs, attack_failed) =
        match filter_candidates(&attack.candidates, setup.attack.filtering) {
            Ok(adv) => {
                let pairs = if adv.filtered {
                    build_adv_pairs(
                        &adv,
                        setup.world,
                        setup.sft,
                        &target,
                        setup.attack.pair_budget,
                        round_seed,
                    )?
                } else {
                    Vec::new()
                };
                (Some(adv), pairs, false)
            }
            Err(Error::AttackFailed(msg)) => {
                warn!("round {round}: attack failed ({msg})");
                (None, Vec::new(), true)
            }
            Err(e) => return Err(e),
        };
    let report = RoundReport {
        round,
        dataset_pairs: dataset.len(),
        adversarial_pairs_in: dataset.count_source(PairSource::Adversarial),
        candidates: attack.candidates.len(),
        passed_filter,
        retained: retained.as_ref().map_or(0, |r| r.len()),
        pairs_built: new_pairs.len(),
        attack_failed,
        dominance_violations: attack.dominance_violations.len(),
    };
    info!("{report:?}");
    Ok(RoundOutcome {
        ensemble,
        attack,
        retained,
        new_pairs,
        report,
    })
}

/// Runs rounds `0..=last`, each training a fresh ensemble on the previous
/// round's dataset plus its adversarial pairs.
pub fn run_rounds(
    setup: &RoundSetup<'_>,
    original: &PreferenceDataset,
    last: usize,
) -> Result<Vec<RoundOutcome>> {
    if last > MAX_ROUNDS {
        return Err(Error::config(format!(
            "at most {MAX_ROUNDS} adversarial rounds are supported"
        )));
    }
    let mut dataset = original.clone();
    let mut cache = ThresholdCache::new();
    let mut seen_inits = BTreeSet::new();
    let mut out: Vec<RoundOutcome> = Vec::new();
    for round in 0..=last {
        if let Some(prev) = out.last() {
            if prev.report.attack_failed {
                warn!(
                    "round {} produced no pairs; stopping before round {round}",
                    round - 1
                );
                break;
            }
        }
        let ensemble = train_ensemble(
            &dataset,
            setup.world,
            setup.rm,
            setup.ensemble,
            setup.reference,
            setup.seed,
            round,
        )?;
        for m in &ensemble {
            assert!(
                seen_inits.insert(m.init_digest()),
                "ensemble member reused an earlier initialisation"
            );
        }
        let outcome = attack_round(setup, ensemble, &dataset, round, &mut cache)?;
        dataset.extend(outcome.new_pairs.iter().cloned());
        out.push(outcome);
    }
    Ok(out)
}
