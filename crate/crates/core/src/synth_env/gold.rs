//! The frozen gold reward model.
//!
//! Quality is a sum of interpretable terms (topical relevance, per-token quality, bigram
//! fluency, a concave length preference, a repetition penalty) plus a wide
//! random `tanh` network over gold-specific features. The proxies never see
//! the bigram table or the concave length shape directly, which is where the
//! proxy-gold generalisation gap comes from.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::features::{FeatureMap, ResponseStats};
use super::{Prompt, Response};
use crate::numerics::{Mlp, ParamStore};
use crate::rng::Rng;
use crate::scoring::{NormStats, Scorer};

pub const GOLD_ARCHITECTURE: &str = "gold-structured-wide-mlp";

/// Weights of the gold quality terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoldConfig {
    pub relevance: f64,
    /// Weight of the mean per-token quality.
    pub token_quality: f64,
    pub fluency: f64,
    pub length: f64,
    pub ideal_length: f64,
    pub length_scale: f64,
    pub repetition: f64,
    pub network: f64,
    pub hidden: usize,
    /// Geometric pooling decay for the network's response embedding.
    pub pooling_decay: f64,
}

impl Default for GoldConfig {
    fn default() -> Self {
        Self {
            relevance: 1.5,
            token_quality: 1.0,
            fluency: 0.7,
            length: 1.0,
            ideal_length: 12.0,
            length_scale: 3.0,
            repetition: 0.5,
            network: 0.5,
            hidden: 64,
            pooling_decay: 0.85,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldModel {
    config: GoldConfig,
    features: FeatureMap,
    bigram: Vec<f64>,
    quality: Vec<f64>,
    net: Mlp,
    params: ParamStore,
    norm: Option<NormStats>,
}

/// Per-term breakdown of a gold score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldTerms {
    pub relevance: f64,
    pub token_quality: f64,
    pub fluency: f64,
    pub length: f64,
    pub repetition: f64,
    pub network: f64,
}

impl GoldTerms {
    pub fn total(&self) -> f64 {
        self.relevance
            + self.token_quality
            + self.fluency
            + self.length
            + self.repetition
            + self.network
    }
}

impl GoldModel {
    pub fn new(config: GoldConfig, features: FeatureMap, rng: &mut Rng) -> Self {
        let v = features.vocab();
        let bigram = (0..v * v)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z
            })
            .collect();
        let quality = (0..v)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z
            })
            .collect();
        let net = Mlp::new(Self::net_width(&features), vec![config.hidden]);
        let params = net.init(rng);
        Self {
            config,
            features,
            bigram,
            quality,
            net,
            params,
            norm: None,
        }
    }

    fn net_width(features: &FeatureMap) -> usize {
        2 * features.embed_dim() + 3
    }

    pub fn architecture(&self) -> &'static str {
        GOLD_ARCHITECTURE
    }

    pub fn config(&self) -> &GoldConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn set_norm(&mut self, norm: NormStats) {
        self.norm = Some(norm);
    }

    pub fn token_quality(&self, t: u16) -> f64 {
        self.quality[t as usize]
    }

    pub fn bigram_score(&self, a: u16, b: u16) -> f64 {
        self.bigram[a as usize * self.features.vocab() + b as usize]
    }

    /// Decayed-position pooling: earlier tokens weigh more.
    fn pooled_embedding(&self, tokens: &[u16]) -> Vec<f64> {
        let d = self.features.embed_dim();
        let mut out = vec![0.0; d];
        let mut total = 0.0;
        let mut w = 1.0;
        for &t in tokens {
            for (o, e) in out.iter_mut().zip(self.features.embedding(t)) {
                *o += w * e;
            }
            total += w;
            w *= self.config.pooling_decay;
        }
        if total > 0.0 {
            out.iter_mut().for_each(|o| *o /= total);
        }
        out
    }

    pub fn terms(&self, prompt: &Prompt, response: &Response) -> GoldTerms {
        let c = &self.config;
        let tokens = &response.tokens;
        let n = tokens.len() as f64;
        let d = self.features.embed_dim() as f64;
        let p = self.features.mean_embedding(&prompt.tokens);
        let p_norm = p.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        let r = self.features.mean_embedding(tokens);
        let relevance = d.sqrt() * r.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() / p_norm;
        let fluency = if tokens.len() >= 2 {
            tokens
                .windows(2)
                .map(|w| self.bigram_score(w[0], w[1]))
                .sum::<f64>()
                / (n - 1.0)
        } else {
            0.0
        };
        let quality = tokens.iter().map(|&t| self.token_quality(t)).sum::<f64>() / n.max(1.0);
        let gap = (n - c.ideal_length) / c.length_scale;
        let stats = ResponseStats::of(tokens, &prompt.tokens, self.features.vocab());
        let repetition = (stats.excess_repeats + stats.adjacent_repeats) as f64;

        let mut x = self.pooled_embedding(tokens);
        x.extend(p.iter().map(|v| v / p_norm));
        x.push(n / self.features.max_len() as f64);
        x.push(stats.distinct as f64 / n.max(1.0));
        x.push(stats.prompt_overlap as f64 / n.max(1.0));
        let network = self
            .net
            .forward(&self.params, &x)
            .expect("gold network layout is fixed at construction");

        GoldTerms {
            relevance: c.relevance * relevance,
            token_quality: c.token_quality * quality,
            fluency: c.fluency * fluency,
            length: -c.length * gap * gap,
            repetition: -c.repetition * repetition,
            network: c.network * network,
        }
    }
}

impl Scorer for GoldModel {
    fn raw_score(&self, prompt: &Prompt, response: &Response) -> f64 {
        self.terms(prompt, response).total()
    }

    fn norm(&self) -> Option<NormStats> {
        self.norm
    }
}
