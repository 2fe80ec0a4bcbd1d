//! Browser bindings: gold scoring in a generated world, the attack reward,
//! and leave-one-out advantages.

use wasm_bindgen::prelude::*;

use advrm::adv_pipeline::{adv_reward_from_scores, AttackConfig, Branch, ThresholdMode, Z_CUTOFF};
use advrm::policy_rl::rloo_advantages;
use advrm::rng::stream;
use advrm::synth_env::{build_world, proposal_response, Response, Token, World, WorldConfig};

#[wasm_bindgen]
pub struct DemoWorld {
    world: World,
    draws: u64,
}

fn parse_tokens(text: &str, vocab: usize) -> Result<Vec<Token>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            let t: usize = s.parse().map_err(|_| format!("not a token id: {s:?}"))?;
            if t == 0 || t >= vocab {
                return Err(format!("token ids must be in 1..{vocab}"));
            }
            Ok(t as Token)
        })
        .collect()
}

#[wasm_bindgen]
impl DemoWorld {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<DemoWorld, JsError> {
        let world =
            build_world(&WorldConfig::default(), seed).map_err(|e| JsError::new(&e.to_string()))?;
        Ok(Self { world, draws: 0 })
    }

    pub fn vocab(&self) -> usize {
        self.world.vocab()
    }

    pub fn prompt_count(&self) -> usize {
        self.world.train_prompts.len()
    }

    pub fn prompt(&self, id: usize) -> Vec<u16> {
        self.world
            .prompt(id)
            .map(|p| p.tokens.clone())
            .unwrap_or_default()
    }

    /// A fresh demonstration-style response, as space-separated token ids.
    pub fn sample_response(&mut self) -> String {
        self.draws += 1;
        let r = proposal_response(
            &self.world,
            2.0,
            &mut stream(self.world.seed, "demo", self.draws),
        );
        r.tokens
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Raw gold score and its terms as JSON.
    pub fn score(&self, prompt_id: usize, tokens: &str) -> Result<String, JsError> {
        let prompt = self
            .world
            .prompt(prompt_id)
            .ok_or_else(|| JsError::new("unknown prompt"))?;
        let mut tokens = parse_tokens(tokens, self.world.vocab()).map_err(|e| JsError::new(&e))?;
        tokens.truncate(self.world.max_len());
        let t = self.world.gold.terms(prompt, &Response::new(tokens));
        Ok(format!(
            r#"{{"total":{:.4},"relevance":{:.4},"token_quality":{:.4},"fluency":{:.4},"length":{:.4},"repetition":{:.4},"network":{:.4}}}"#,
            t.total(),
            t.relevance,
            t.token_quality,
            t.fluency,
            t.length,
            t.repetition,
            t.network
        ))
    }
}

/// Attack reward for normalized scores, plus whether a sample with
/// disagreement z-score `z` would pass the filter.
#[wasm_bindgen]
pub fn attack_reward(
    r1: f64,
    r2: f64,
    threshold: f64,
    lambda: f64,
    penalty: f64,
    constrained: bool,
    z: f64,
) -> String {
    let config = AttackConfig {
        lambda,
        penalty,
        threshold_mode: if constrained {
            ThresholdMode::Constrained
        } else {
            ThresholdMode::Disabled
        },
        ..AttackConfig::default()
    };
    let r = adv_reward_from_scores(r1, r2, threshold, &config);
    let branch = match r.branch {
        Branch::Attack => "attack",
        Branch::Penalty => "penalty",
    };
    let passes = r1 > threshold && z > Z_CUTOFF;
    format!(
        r#"{{"value":{:.4},"branch":"{branch}","passes_filter":{passes}}}"#,
        r.value
    )
}

/// Leave-one-out advantages of one prompt's sampled rewards.
#[wasm_bindgen]
pub fn rloo(rewards: Vec<f64>) -> Result<Vec<f64>, JsError> {
    rloo_advantages(&rewards).map_err(|e| JsError::new(&e.to_string()))
}
