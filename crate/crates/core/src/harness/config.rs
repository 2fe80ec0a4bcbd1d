use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adv_pipeline::{AttackConfig, EnsembleConfig, MAX_ROUNDS};
use crate::error::{Error, Result};
use crate::eval::{HACKING_MARGIN, MIN_REFERENCE_SAMPLES, RRM_MULTIPLIERS};
use crate::policy_rl::RlConfig;
use crate::reward_model::RmConfig;
use crate::synth_env::{SftConfig, WorldConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Gold-labelled SFT pairs in the original preference dataset.
    pub n_pairs: usize,
    /// SFT samples behind reward and disagreement normalisation.
    pub reference_samples: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_pairs: 1500,
            reference_samples: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// SFT samples per evaluation prompt behind the success criteria.
    pub reference_samples: usize,
    pub attacks_per_prompt: usize,
    pub perturb_variants: usize,
    pub perturb_edits: usize,
    pub hacking_margin: f64,
    pub smoothing_window: usize,
    pub correlation_samples: usize,
    /// Also train the ensemble and augmentation baselines downstream.
    pub downstream_baselines: bool,
    pub ensemble_lambda: f64,
    pub rrm_multiplier: usize,
    /// Train the lambda = 1 and no-threshold attack ablations.
    pub ablations: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            reference_samples: 64,
            attacks_per_prompt: 4,
            perturb_variants: 100,
            perturb_edits: 3,
            hacking_margin: HACKING_MARGIN,
            smoothing_window: 5,
            correlation_samples: 1024,
            downstream_baselines: true,
            ensemble_lambda: 0.5,
            rrm_multiplier: 2,
            ablations: true,
        }
    }
}

/// Full description of one experiment; a run is `(config, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Index of the last adversarial round.
    pub rounds: usize,
    pub world: WorldConfig,
    pub sft: SftConfig,
    pub data: DataConfig,
    pub rm: RmConfig,
    pub ensemble: EnsembleConfig,
    /// Downstream policy optimisation against a proxy.
    pub rlhf: RlConfig,
    /// Optimisation of the adversarial policy.
    pub attack_rl: RlConfig,
    pub attack: AttackConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            rounds: MAX_ROUNDS,
            world: WorldConfig::default(),
            sft: SftConfig::default(),
            data: DataConfig::default(),
            rm: RmConfig::default(),
            ensemble: EnsembleConfig::default(),
            rlhf: RlConfig {
                max_steps: 600,
                ..RlConfig::default()
            },
            attack_rl: RlConfig::default(),
            attack: AttackConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::parse("config", e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.rm.validate()?;
        self.rlhf.validate()?;
        self.attack_rl.validate()?;
        self.attack.validate()?;
        if self.rounds > MAX_ROUNDS {
            return Err(Error::config(format!("rounds must be <= {MAX_ROUNDS}")));
        }
        if self.ensemble.size != 2 {
            return Err(Error::config(
                "the attack reward is defined for a two-member ensemble",
            ));
        }
        if self.data.n_pairs < 2 * self.ensemble.size {
            return Err(Error::config("n_pairs is too small to train the ensemble"));
        }
        if self.data.reference_samples < 2 || self.eval.correlation_samples < 2 {
            return Err(Error::config(
                "reference and correlation sets need at least two samples",
            ));
        }
        if self.eval.reference_samples < MIN_REFERENCE_SAMPLES {
            return Err(Error::config(format!(
                "eval.reference_samples must be >= {MIN_REFERENCE_SAMPLES}"
            )));
        }
        if self.eval.attacks_per_prompt == 0 {
            return Err(Error::config("eval.attacks_per_prompt must be >= 1"));
        }
        if !RRM_MULTIPLIERS.contains(&self.eval.rrm_multiplier) {
            return Err(Error::config(format!(
                "eval.rrm_multiplier must be one of {RRM_MULTIPLIERS:?}"
            )));
        }
        Ok(())
    }

    /// Applies a `dotted.key=value` override; the value is parsed as TOML and
    /// falls back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
        let value = parse_value(raw.trim());
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::parse("config", e))?;
        let mut slot = &mut root;
        for part in key.trim().split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| Error::config(format!("unknown config key {key:?}")))?;
        }
        *slot = value;
        let updated: Self = root
            .try_into()
            .map_err(|e| Error::parse(format!("override {key}"), e))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_partial_files() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
        let partial = ExperimentConfig::from_toml("seed = 3\n[rlhf]\nmax_steps = 10\n").unwrap();
        assert_eq!(partial.seed, 3);
        assert_eq!(partial.rlhf.max_steps, 10);
        assert_eq!(partial.rlhf.kl_beta, 0.05);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("sed = 3").is_err());
        assert!(ExperimentConfig::from_toml("[rlhf]\nbeta = 1.0").is_err());
        let mut c = ExperimentConfig::default();
        assert!(c.apply_override("rlhf.beta=1").is_err());
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::default();
        c.apply_override("attack.lambda=12").unwrap();
        c.apply_override("ensemble.split=shared").unwrap();
        c.apply_override("rm.hidden=[8, 8]").unwrap();
        assert_eq!(c.attack.lambda, 12.0);
        assert_eq!(c.rm.hidden, vec![8, 8]);
        assert!(c.apply_override("rounds=5").is_err());
        assert!(c.apply_override("rounds").is_err());
    }
}
