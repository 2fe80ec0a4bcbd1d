//! KL-regularised policy optimisation with REINFORCE leave-one-out baselines.
//!
//! The same trainer drives RLHF against a proxy reward model and the
//! adversarial policy against the constrained attack reward.

mod policy;
mod rloo;
mod train;

pub use policy::{PolicyNet, PolicySpec, Rollout};
pub use rloo::{kl_penalized_reward, rloo_advantages};
pub use train::{
    trace_to_jsonl, train_policy, train_policy_from, RewardFn, RlConfig, RolloutView, StartAt,
    StepMetrics, TrainHooks,
};
