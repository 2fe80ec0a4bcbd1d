//! Attack-success criteria, uncertainty–quality correlation, reward-hacking
//! curves and the attack and robustness baselines.

mod attacks;
mod baselines;
mod criteria;
mod curves;

pub use attacks::{
    eval_target, evaluate_policy_attacks, judge_responses, select_attack, verdicts_to_jsonl,
    Selection, VerdictRecord, ATTACKS_PER_PROMPT,
};
pub use baselines::{
    edit_distance, ensemble_objective, ensemble_of_scores, overoptimization_attack, rrm_augment,
    token_perturbation_attack, EnsembleMode, OverOptimization, ENSEMBLE_LAMBDA_GRID,
    RRM_MULTIPLIERS,
};
pub use criteria::{
    pearson, success_rate, success_standard, success_strict, AttackVerdict, PromptReferences,
    ScoreReference, SuccessRate, MIN_REFERENCE_SAMPLES, STRICT_GOLD_CUTOFF,
};
pub use curves::{
    curve_from_trace, hacking_curve_report, smooth, CurvePoint, HackingReport, HACKING_MARGIN,
};
