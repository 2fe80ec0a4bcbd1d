//! Adversarial reward-model training: the constrained attack reward, attack
//! collection and filtering, pair construction and the multi-round loop.

mod attack;
mod rounds;

pub use attack::{
    adv_reward, adv_reward_from_scores, build_adv_pairs, disagreement_reference, filter_candidates,
    rm_digest, train_adversarial_policy, windowed_means, AdvDataset, AdvReward, AdvSample,
    AttackConfig, AttackRun, AttackTarget, Branch, DominanceCheck, ThresholdCache, ThresholdMode,
    LAMBDA_GRID, MAX_CHOSEN_ATTEMPTS, Z_CUTOFF,
};
pub use rounds::{
    attack_round, member_seed, run_rounds, train_ensemble, EnsembleConfig, EnsembleSplit,
    RoundOutcome, RoundReport, RoundSetup, MAX_ROUNDS,
};
