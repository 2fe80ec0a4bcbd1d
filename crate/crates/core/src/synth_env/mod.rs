//! The synthetic language world: vocabulary, prompts, the frozen feature map,
//! the gold reward model, the cloned SFT policy and gold-labelled preference data.

mod dataset;
mod features;
mod gold;
mod sft;

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use dataset::gen_preference_dataset;
pub use features::{FeatureMap, ResponseStats, NUM_STATS};
pub use gold::{GoldConfig, GoldModel, GoldTerms, GOLD_ARCHITECTURE};
pub use sft::{make_sft_policy, proposal_response, random_response, reference_samples, SftConfig};

use crate::error::{Error, Result};
use crate::rng::stream;

pub type Token = u16;

/// Token id `0` terminates responses; content tokens are `1..vocab`.
pub const END_TOKEN: Token = 0;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prompt {
    pub id: usize,
    pub tokens: Vec<Token>,
}

impl Prompt {
    pub fn new(id: usize, tokens: Vec<Token>) -> Self {
        Self { id, tokens }
    }
}

/// Response content tokens. A response shorter than the maximum length ends
/// with an (implicit) end marker at position `tokens.len()`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Response {
    pub tokens: Vec<Token>,
}

impl Response {
    pub fn new(tokens: Vec<Token>) -> Self {
        Self { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn end_position(&self, max_len: usize) -> Option<usize> {
        (self.tokens.len() < max_len).then_some(self.tokens.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub vocab: usize,
    pub max_response_len: usize,
    pub prompt_len: usize,
    pub train_prompts: usize,
    pub eval_prompts: usize,
    pub embed_dim: usize,
    pub bigram_buckets: usize,
    pub gold: GoldConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            vocab: 32,
            max_response_len: 16,
            prompt_len: 6,
            train_prompts: 256,
            eval_prompts: 128,
            embed_dim: 8,
            bigram_buckets: 64,
            gold: GoldConfig::default(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 || self.max_response_len < 1 {
            return Err(Error::config(
                "degenerate world: need vocab >= 2 and max_response_len >= 1",
            ));
        }
        if self.vocab < 8 {
            return Err(Error::config(
                "world vocabulary must have at least 8 symbols",
            ));
        }
        if self.vocab > Token::MAX as usize {
            return Err(Error::config("vocabulary too large for token ids"));
        }
        if self.train_prompts < 1 || self.eval_prompts < 1 {
            return Err(Error::config("need at least one train and one eval prompt"));
        }
        if self.prompt_len < 1 || self.embed_dim < 1 || self.bigram_buckets < 1 {
            return Err(Error::config(
                "prompt_len, embed_dim and bigram_buckets must be >= 1",
            ));
        }
        Ok(())
    }
}

/// Lookup of prompts by id.
pub trait PromptSource {
    fn prompt(&self, id: usize) -> Option<&Prompt>;
}

impl PromptSource for [Prompt] {
    fn prompt(&self, id: usize) -> Option<&Prompt> {
        self.iter().find(|p| p.id == id)
    }
}

impl PromptSource for Vec<Prompt> {
    fn prompt(&self, id: usize) -> Option<&Prompt> {
        self.as_slice().prompt(id)
    }
}

impl PromptSource for World {
    fn prompt(&self, id: usize) -> Option<&Prompt> {
        World::prompt(self, id)
    }
}

/// Everything fixed by `(config, seed)` before any learning happens.
#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub seed: u64,
    pub train_prompts: Vec<Prompt>,
    pub eval_prompts: Vec<Prompt>,
    pub features: Arc<FeatureMap>,
    pub gold: GoldModel,
}

impl World {
    pub fn vocab(&self) -> usize {
        self.config.vocab
    }

    pub fn max_len(&self) -> usize {
        self.config.max_response_len
    }

    /// Looks a prompt up by id across both splits.
    pub fn prompt(&self, id: usize) -> Option<&Prompt> {
        let n = self.train_prompts.len();
        if id < n {
            self.train_prompts.get(id)
        } else {
            self.eval_prompts.get(id - n)
        }
    }

    pub fn all_prompts(&self) -> impl Iterator<Item = &Prompt> {
        self.train_prompts.iter().chain(&self.eval_prompts)
    }
}

/// Builds the vocabulary, prompt splits, shared feature map and gold model.
pub fn build_world(config: &WorldConfig, seed: u64) -> Result<World> {
    config.validate()?;
    let mut rng = stream(seed, "world/prompts", 0);
    let total = config.train_prompts + config.eval_prompts;
    let prompts: Vec<Prompt> = (0..total)
        .map(|id| {
            let len = rng.random_range(2.min(config.prompt_len)..=config.prompt_len);
            let tokens = (0..len)
                .map(|_| rng.random_range(1..config.vocab) as Token)
                .collect();
            Prompt::new(id, tokens)
        })
        .collect();
    let (train, eval) = prompts.split_at(config.train_prompts);
    let features = FeatureMap::new(
        config.vocab,
        config.embed_dim,
        config.bigram_buckets,
        config.max_response_len,
        &mut stream(seed, "world/features", 0),
        seed,
    );
    let gold = GoldModel::new(
        config.gold.clone(),
        features.clone(),
        &mut stream(seed, "world/gold", 0),
    );
    Ok(World {
        config: config.clone(),
        seed,
        train_prompts: train.to_vec(),
        eval_prompts: eval.to_vec(),
        features: Arc::new(features),
        gold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::Scorer;

    #[test]
    fn world_is_deterministic() {
        let cfg = WorldConfig::default();
        let a = build_world(&cfg, 11).unwrap();
        let b = build_world(&cfg, 11).unwrap();
        assert_eq!(a.train_prompts, b.train_prompts);
        let r = Response::new(vec![3, 7, 7, 1, 30]);
        for p in a.eval_prompts.iter().take(10) {
            assert_eq!(
                a.gold.raw_score(p, &r).to_bits(),
                b.gold.raw_score(p, &r).to_bits()
            );
        }
        let c = build_world(&cfg, 12).unwrap();
        assert_ne!(a.train_prompts, c.train_prompts);
    }

    #[test]
    fn default_world_shape() {
        let w = build_world(&WorldConfig::default(), 0).unwrap();
        assert_eq!(w.vocab(), 32);
        assert_eq!(w.max_len(), 16);
        assert_eq!(w.train_prompts.len(), 256);
        assert_eq!(w.eval_prompts.len(), 128);
        for p in w.all_prompts() {
            assert!(!p.tokens.is_empty() && p.tokens.len() <= 6);
            assert!(p.tokens.iter().all(|t| *t >= 1 && (*t as usize) < 32));
        }
        assert_eq!(w.prompt(256).unwrap().id, 256);
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        let mut cfg = WorldConfig {
            vocab: 1,
            ..WorldConfig::default()
        };
        assert!(build_world(&cfg, 0).is_err());
        cfg.vocab = 32;
        cfg.max_response_len = 0;
        assert!(build_world(&cfg, 0).is_err());
        cfg.max_response_len = 16;
        cfg.vocab = 4;
        assert!(build_world(&cfg, 0).is_err());
    }

    #[test]
    fn end_position_reflects_max_len() {
        assert_eq!(Response::new(vec![1, 2]).end_position(4), Some(2));
        assert_eq!(Response::new(vec![1, 2, 3, 4]).end_position(4), None);
    }
}
