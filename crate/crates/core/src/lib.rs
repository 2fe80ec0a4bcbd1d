//! A desk-scale laboratory for adversarial reward-model training.
//!
//! Proxy reward models are trained with a Bradley-Terry loss on preferences
//! labelled by a frozen gold model, attacked by an RL-trained adversarial
//! policy that maximises ensemble disagreement under a reward-threshold
//! constraint, and retrained from scratch on the filtered attacks over
//! several rounds. Everything runs in a small synthetic token world so the
//! whole loop, including downstream reward hacking, fits on a laptop.

pub mod adv_pipeline;
pub mod error;
pub mod eval;
pub mod harness;
pub mod numerics;
pub mod policy_rl;
pub mod reward_model;
pub mod rng;
pub mod scoring;
pub mod synth_env;

pub use error::{Error, Result};
