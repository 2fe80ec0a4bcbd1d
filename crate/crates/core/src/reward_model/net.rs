use std::sync::Arc;

use log::{debug, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::pairs::{PreferenceDataset, PreferencePair};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamConfig, Gradients, Mlp, ParamStore};
use crate::rng::stream;
use crate::scoring::{NormStats, Sample, Scorer};
use crate::synth_env::{FeatureMap, Prompt, PromptSource, Response};

pub const PROXY_ARCHITECTURE: &str = "proxy-mlp";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RmConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Number of fresh SFT responses used for post-hoc calibration.
    pub calibration_samples: usize,
    /// Standardise inputs with statistics of the training pairs.
    pub standardize: bool,
}

impl Default for RmConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16],
            epochs: 1,
            batch_size: 32,
            lr: 0.02,
            calibration_samples: 1024,
            standardize: true,
        }
    }
}

impl RmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config(
                "reward model epochs and batch_size must be >= 1",
            ));
        }
        AdamConfig::with_lr(self.lr).validate()
    }
}

/// Sidecar written next to a reward-model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmSidecar {
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub seed: u64,
    pub architecture: String,
    pub hidden: Vec<usize>,
    pub init_digest: u64,
    pub scaler: FeatureScaler,
}

/// Per-feature affine standardisation of reward-model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    /// Reciprocal of the floored standard deviation.
    pub scale: Vec<f64>,
}

impl FeatureScaler {
    /// Features that barely vary in training are divided by this instead.
    pub const STD_FLOOR: f64 = 0.02;

    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            scale: vec![1.0; width],
        }
    }

    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, width: usize) -> Self {
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        let mut n = 0.0;
        for row in rows {
            for (i, v) in row.iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
            n += 1.0;
        }
        if n == 0.0 {
            return Self::identity(width);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| 1.0 / (q / n - m * m).max(0.0).sqrt().max(Self::STD_FLOOR))
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(f, (m, s))| (f - m) * s)
            .collect()
    }
}

/// Bradley-Terry scorer over the shared feature map.
#[derive(Debug, Clone)]
pub struct RewardNet {
    mlp: Mlp,
    params: ParamStore,
    features: Arc<FeatureMap>,
    scaler: FeatureScaler,
    norm: Option<NormStats>,
    seed: u64,
    init_digest: u64,
}

/// FNV digest of parameter bit patterns; identifies an initialisation.
pub fn param_digest(params: &ParamStore) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in params.flatten() {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl RewardNet {
    /// Fresh, untrained network initialised from `seed`.
    pub fn init(features: Arc<FeatureMap>, hidden: &[usize], seed: u64) -> Self {
        let mlp = Mlp::new(features.width(), hidden.to_vec());
        let params = mlp.init(&mut stream(seed, "rm/init", 0));
        let init_digest = param_digest(&params);
        Self {
            mlp,
            params,
            scaler: FeatureScaler::identity(features.width()),
            features,
            norm: None,
            seed,
            init_digest,
        }
    }

    pub fn from_parts(
        features: Arc<FeatureMap>,
        params: ParamStore,
        sidecar: &RmSidecar,
    ) -> Result<Self> {
        let mlp = Mlp::new(features.width(), sidecar.hidden.clone());
        if mlp.zeros().num_values() != params.num_values()
            || sidecar.scaler.mean.len() != features.width()
        {
            return Err(Error::config(
                "checkpoint does not match reward-model layout",
            ));
        }
        let norm = match (sidecar.mu, sidecar.sigma) {
            (Some(mu), Some(sigma)) => Some(NormStats { mu, sigma }),
            _ => None,
        };
        Ok(Self {
            mlp,
            params,
            features,
            scaler: sidecar.scaler.clone(),
            norm,
            seed: sidecar.seed,
            init_digest: sidecar.init_digest,
        })
    }

    pub fn sidecar(&self) -> RmSidecar {
        RmSidecar {
            mu: self.norm.map(|n| n.mu),
            sigma: self.norm.map(|n| n.sigma),
            seed: self.seed,
            architecture: PROXY_ARCHITECTURE.to_string(),
            hidden: self.mlp.hidden.clone(),
            init_digest: self.init_digest,
            scaler: self.scaler.clone(),
        }
    }

    pub fn architecture(&self) -> &'static str {
        PROXY_ARCHITECTURE
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn feature_map(&self) -> &Arc<FeatureMap> {
        &self.features
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn init_digest(&self) -> u64 {
        self.init_digest
    }

    pub fn is_calibrated(&self) -> bool {
        self.norm.is_some()
    }

    pub fn scaler(&self) -> &FeatureScaler {
        &self.scaler
    }

    /// Standardised network input for a raw feature vector.
    pub fn inputs(&self, features: &[f64]) -> Vec<f64> {
        self.scaler.apply(features)
    }

    pub fn raw_from_features(&self, features: &[f64]) -> f64 {
        self.raw_from_inputs(&self.inputs(features))
    }

    fn raw_from_inputs(&self, inputs: &[f64]) -> f64 {
        self.mlp
            .forward(&self.params, inputs)
            .expect("feature width fixed by the shared map")
    }

    /// Sets `(mu, sigma)` to the population statistics of raw scores on `reference`.
    pub fn calibrate(&mut self, reference: &[Sample]) -> Result<NormStats> {
        let raw: Vec<f64> = reference
            .iter()
            .map(|s| self.raw_score(&s.prompt, &s.response))
            .collect();
        let norm = NormStats::from_values(&raw)?;
        self.norm = Some(norm);
        Ok(norm)
    }

    pub fn set_norm(&mut self, norm: NormStats) {
        self.norm = Some(norm);
    }
}

impl Scorer for RewardNet {
    fn raw_score(&self, prompt: &Prompt, response: &Response) -> f64 {
        self.raw_from_features(&self.features.features(prompt, response))
    }

    fn norm(&self) -> Option<NormStats> {
        self.norm
    }
}

/// `-log sigmoid(margin)`, stable for large |margin|.
pub fn bt_pair_loss(margin: f64) -> f64 {
    if margin > 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standardised pair inputs cached for training.
struct Featurized {
    chosen: Vec<f64>,
    rejected: Vec<f64>,
}

fn featurize(
    rm: &RewardNet,
    prompts: &dyn PromptSource,
    pair: &PreferencePair,
) -> Result<Featurized> {
    let prompt = prompts
        .prompt(pair.prompt_id)
        .ok_or_else(|| Error::config(format!("unknown prompt id {}", pair.prompt_id)))?;
    Ok(Featurized {
        chosen: rm.features.features(prompt, &pair.chosen),
        rejected: rm.features.features(prompt, &pair.rejected),
    })
}

fn standardize(rm: &RewardNet, f: Featurized) -> Featurized {
    Featurized {
        chosen: rm.inputs(&f.chosen),
        rejected: rm.inputs(&f.rejected),
    }
}

fn bt_batch(
    rm: &RewardNet,
    batch: &[&Featurized],
    ids: &[usize],
    grads: &mut Gradients,
) -> Result<f64> {
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for (f, id) in batch.iter().zip(ids) {
        let sw = rm.raw_from_inputs(&f.chosen);
        let sl = rm.raw_from_inputs(&f.rejected);
        if !sw.is_finite() || !sl.is_finite() {
            return Err(Error::numeric(format!("non-finite score on pair {id}")));
        }
        let margin = sw - sl;
        loss += bt_pair_loss(margin) / n;
        // d/dm of -log sigmoid(m) = -sigmoid(-m)
        let d = -sigmoid(-margin) / n;
        rm.mlp
            .accumulate_backward(&rm.params, &f.chosen, d, grads)?;
        rm.mlp
            .accumulate_backward(&rm.params, &f.rejected, -d, grads)?;
    }
    Ok(loss)
}

/// Mean Bradley-Terry loss on raw scores and its parameter gradients.
pub fn bt_loss_and_grads(
    rm: &RewardNet,
    batch: &[PreferencePair],
    prompts: &dyn PromptSource,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::config("Bradley-Terry loss needs a non-empty batch"));
    }
    let feats = batch
        .iter()
        .map(|p| Ok(standardize(rm, featurize(rm, prompts, p)?)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Featurized> = feats.iter().collect();
    let ids: Vec<usize> = (0..batch.len()).collect();
    let mut grads = Gradients::zeros_like(&rm.params);
    let loss = bt_batch(rm, &refs, &ids, &mut grads)?;
    Ok((loss, grads))
}

/// Per-epoch visiting orders derived from `seed`.
pub fn epoch_orders(n: usize, epochs: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..epochs)
        .map(|e| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut stream(seed, "rm/shuffle", e as u64));
            order
        })
        .collect()
}

/// Trains a fresh reward model (init and shuffle both derived from `seed`),
/// then calibrates it on `reference`.
pub fn train_rm(
    dataset: &PreferenceDataset,
    features: Arc<FeatureMap>,
    prompts: &dyn PromptSource,
    config: &RmConfig,
    seed: u64,
    reference: &[Sample],
) -> Result<RewardNet> {
    let orders = epoch_orders(dataset.len(), config.epochs, seed);
    train_rm_with_orders(dataset, features, prompts, config, seed, &orders, reference)
}

/// [`train_rm`] with explicit per-epoch visiting orders.
pub fn train_rm_with_orders(
    dataset: &PreferenceDataset,
    features: Arc<FeatureMap>,
    prompts: &dyn PromptSource,
    config: &RmConfig,
    seed: u64,
    orders: &[Vec<usize>],
    reference: &[Sample],
) -> Result<RewardNet> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::config(
            "cannot train a reward model on an empty dataset",
        ));
    }
    if dataset.pairs.iter().all(|p| p.chosen == p.rejected) {
        warn!("every pair has identical responses; the loss cannot decrease");
    }
    let mut rm = RewardNet::init(features, &config.hidden, seed);
    let raw = dataset
        .pairs
        .iter()
        .map(|p| featurize(&rm, prompts, p))
        .collect::<Result<Vec<_>>>()?;
    if config.standardize {
        let rows = raw
            .iter()
            .flat_map(|f| [f.chosen.as_slice(), f.rejected.as_slice()]);
        rm.scaler = FeatureScaler::fit(rows, rm.features.width());
    }
    let feats: Vec<Featurized> = raw.into_iter().map(|f| standardize(&rm, f)).collect();
    let adam = AdamConfig::with_lr(config.lr);
    let mut grads = Gradients::zeros_like(&rm.params);
    for (epoch, order) in orders.iter().enumerate() {
        if order.len() != feats.len() {
            return Err(Error::config("epoch order length does not match dataset"));
        }
        let mut total = 0.0;
        for ids in order.chunks(config.batch_size) {
            grads.fill_zero();
            let batch: Vec<&Featurized> = ids.iter().map(|&i| &feats[i]).collect();
            total += bt_batch(&rm, &batch, ids, &mut grads)? * ids.len() as f64;
            adam_step(&mut rm.params, &grads, &adam)?;
        }
        debug!(
            "rm seed {seed} epoch {epoch}: mean loss {:.4}",
            total / feats.len() as f64
        );
    }
    if !reference.is_empty() {
        rm.calibrate(reference)?;
    }
    Ok(rm)
}

/// Fraction of pairs with a strictly positive raw margin.
pub fn pair_accuracy(
    rm: &RewardNet,
    dataset: &PreferenceDataset,
    prompts: &dyn PromptSource,
) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let correct = dataset
        .pairs
        .iter()
        .filter(|p| {
            prompts
                .prompt(p.prompt_id)
                .is_some_and(|x| rm.raw_score(x, &p.chosen) > rm.raw_score(x, &p.rejected))
        })
        .count();
    correct as f64 / dataset.len() as f64
}
