use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::synth_env::{Response, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    Original,
    Adversarial,
    RrmAugmented,
}

/// Attack diagnostics attached to adversarial pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvFields {
    pub r1: f64,
    pub r2: f64,
    pub u: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub prompt_id: usize,
    pub chosen: Response,
    pub rejected: Response,
    pub source: PairSource,
    pub gold_chosen: f64,
    pub gold_rejected: f64,
    pub adv: Option<AdvFields>,
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub prompt_id: usize,
    pub chosen_tokens: Vec<Token>,
    pub rejected_tokens: Vec<Token>,
    pub source: PairSource,
    pub gold_chosen: f64,
    pub gold_rejected: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

impl From<&PreferencePair> for PairRecord {
    fn from(p: &PreferencePair) -> Self {
        Self {
            prompt_id: p.prompt_id,
            chosen_tokens: p.chosen.tokens.clone(),
            rejected_tokens: p.rejected.tokens.clone(),
            source: p.source,
            gold_chosen: p.gold_chosen,
            gold_rejected: p.gold_rejected,
            r1: p.adv.map(|a| a.r1),
            r2: p.adv.map(|a| a.r2),
            u: p.adv.map(|a| a.u),
            z: p.adv.map(|a| a.z),
        }
    }
}

impl TryFrom<PairRecord> for PreferencePair {
    type Error = Error;

    fn try_from(r: PairRecord) -> Result<Self> {
        let adv = match (r.r1, r.r2, r.u, r.z) {
            (Some(r1), Some(r2), Some(u), Some(z)) => Some(AdvFields { r1, r2, u, z }),
            (None, None, None, None) => None,
            _ => {
                return Err(Error::parse(
                    "dataset record",
                    "r1, r2, u and z must be given together",
                ))
            }
        };
        Ok(Self {
            prompt_id: r.prompt_id,
            chosen: Response::new(r.chosen_tokens),
            rejected: Response::new(r.rejected_tokens),
            source: r.source,
            gold_chosen: r.gold_chosen,
            gold_rejected: r.gold_rejected,
            adv,
        })
    }
}

/// Ordered collection of preference pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PreferenceDataset {
    pub pairs: Vec<PreferencePair>,
}

impl PreferenceDataset {
    pub fn new(pairs: Vec<PreferencePair>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn extend(&mut self, other: impl IntoIterator<Item = PreferencePair>) {
        self.pairs.extend(other);
    }

    pub fn count_source(&self, source: PairSource) -> usize {
        self.pairs.iter().filter(|p| p.source == source).count()
    }

    /// Seed-determined permutation of the pairs.
    pub fn shuffled(&self, seed: u64) -> Self {
        let mut pairs = self.pairs.clone();
        pairs.shuffle(&mut stream(seed, "dataset/shuffle", 0));
        Self { pairs }
    }

    /// Splits a seed-determined shuffle into `k` disjoint, near-equal parts.
    pub fn split_disjoint(&self, k: usize, seed: u64) -> Result<Vec<Self>> {
        if k == 0 || k > self.len() {
            return Err(Error::config(format!(
                "cannot split {} pairs into {k} parts",
                self.len()
            )));
        }
        let shuffled = self.shuffled(seed);
        let mut parts = vec![Vec::new(); k];
        for (i, p) in shuffled.pairs.into_iter().enumerate() {
            parts[i % k].push(p);
        }
        Ok(parts.into_iter().map(Self::new).collect())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&serde_json::to_string(&PairRecord::from(p)).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let pairs = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, line)| {
                let record: PairRecord = serde_json::from_str(line)
                    .map_err(|e| Error::parse(format!("dataset line {}", i + 1), e))?;
                PreferencePair::try_from(record)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { pairs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: usize, adv: bool) -> PreferencePair {
        PreferencePair {
            prompt_id: id,
            chosen: Response::new(vec![1, 2, 3]),
            rejected: Response::new(vec![4]),
            source: if adv {
                PairSource::Adversarial
            } else {
                PairSource::Original
            },
            gold_chosen: 0.5,
            gold_rejected: -1.25,
            adv: adv.then_some(AdvFields {
                r1: 0.3,
                r2: -2.0,
                u: 20.3,
                z: 2.4,
            }),
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let ds = PreferenceDataset::new(vec![pair(0, false), pair(3, true)]);
        let text = ds.to_jsonl();
        assert!(text
            .lines()
            .next()
            .unwrap()
            .contains("\"source\":\"original\""));
        assert!(!text.lines().next().unwrap().contains("r1"));
        assert_eq!(PreferenceDataset::from_jsonl(&text).unwrap(), ds);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let line = r#"{"prompt_id":0,"chosen_tokens":[1],"rejected_tokens":[2],"source":"original","gold_chosen":1.0,"gold_rejected":0.0,"extra":1}"#;
        assert!(PreferenceDataset::from_jsonl(line).is_err());
    }

    #[test]
    fn disjoint_split_partitions() {
        let ds = PreferenceDataset::new((0..10).map(|i| pair(i, false)).collect());
        let parts = ds.split_disjoint(3, 4).unwrap();
        let mut ids: Vec<usize> = parts
            .iter()
            .flat_map(|p| p.pairs.iter().map(|x| x.prompt_id))
            .collect();
        ids.sort();
        assert_eq!(ids, (0..10).collect::<Vec<_>>());
        assert_eq!(
            parts.iter().map(|p| p.len()).collect::<Vec<_>>(),
            vec![4, 3, 3]
        );
        assert_ne!(ds.shuffled(1), ds.shuffled(2));
        assert_eq!(ds.shuffled(1), ds.shuffled(1));
    }
}
