use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Prompt, Response, Token};
use crate::rng::{derive_seed, Rng};

/// Number of scalar response statistics appended after the pooled embeddings.
pub const NUM_STATS: usize = 5;

/// Frozen map from (prompt, response) to a fixed-width feature vector.
///
/// Layout: mean response embedding, mean prompt embedding, their elementwise
/// product, [`NUM_STATS`] response statistics, hashed bigram frequencies,
/// then unigram token frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    vocab: usize,
    dim: usize,
    buckets: usize,
    max_len: usize,
    embed: Vec<f64>,
    bucket_of: Vec<u16>,
}

impl FeatureMap {
    pub fn new(
        vocab: usize,
        dim: usize,
        buckets: usize,
        max_len: usize,
        rng: &mut Rng,
        salt: u64,
    ) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let embed = (0..vocab * dim)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * scale
            })
            .collect();
        let bucket_of = (0..vocab * vocab)
            .map(|i| (derive_seed(salt, "bigram-bucket", i as u64) % buckets as u64) as u16)
            .collect();
        Self {
            vocab,
            dim,
            buckets,
            max_len,
            embed,
            bucket_of,
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn embed_dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        3 * self.dim + NUM_STATS + self.buckets + self.vocab
    }

    pub fn embedding(&self, token: Token) -> &[f64] {
        let t = token as usize;
        &self.embed[t * self.dim..(t + 1) * self.dim]
    }

    pub fn bucket(&self, a: Token, b: Token) -> usize {
        self.bucket_of[a as usize * self.vocab + b as usize] as usize
    }

    pub fn mean_embedding(&self, tokens: &[Token]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if tokens.is_empty() {
            return out;
        }
        for &t in tokens {
            for (o, e) in out.iter_mut().zip(self.embedding(t)) {
                *o += e;
            }
        }
        let n = tokens.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    pub fn features(&self, prompt: &Prompt, response: &Response) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.width());
        let r = self.mean_embedding(&response.tokens);
        let p = self.mean_embedding(&prompt.tokens);
        f.extend_from_slice(&r);
        f.extend_from_slice(&p);
        f.extend(r.iter().zip(&p).map(|(a, b)| a * b * self.dim as f64));
        let stats = ResponseStats::of(&response.tokens, &prompt.tokens, self.vocab);
        let n = response.tokens.len().max(1) as f64;
        f.push(response.tokens.len() as f64 / self.max_len as f64);
        f.push(stats.distinct as f64 / n);
        f.push(stats.max_count as f64 / n);
        f.push(stats.adjacent_repeats as f64 / (n - 1.0).max(1.0));
        f.push(stats.prompt_overlap as f64 / n);
        let mut hist = vec![0.0; self.buckets];
        for w in response.tokens.windows(2) {
            hist[self.bucket(w[0], w[1])] += 1.0;
        }
        let pairs = (response.tokens.len().saturating_sub(1)).max(1) as f64;
        f.extend(hist.iter().map(|h| h / pairs));
        let mut unigram = vec![0.0; self.vocab];
        for &t in &response.tokens {
            unigram[t as usize] += 1.0 / n;
        }
        f.extend(unigram);
        f
    }
}

/// Count statistics of a response token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResponseStats {
    pub distinct: usize,
    pub max_count: usize,
    pub adjacent_repeats: usize,
    pub prompt_overlap: usize,
    /// Occurrences beyond the second of any single token.
    pub excess_repeats: usize,
}

impl ResponseStats {
    pub fn of(tokens: &[Token], prompt: &[Token], vocab: usize) -> Self {
        let mut counts = vec![0usize; vocab];
        for &t in tokens {
            counts[t as usize] += 1;
        }
        let adjacent_repeats = tokens.windows(2).filter(|w| w[0] == w[1]).count();
        let prompt_overlap = tokens.iter().filter(|t| prompt.contains(t)).count();
        Self {
            distinct: counts.iter().filter(|c| **c > 0).count(),
            max_count: counts.iter().copied().max().unwrap_or(0),
            adjacent_repeats,
            prompt_overlap,
            excess_repeats: counts.iter().map(|c| c.saturating_sub(2)).sum(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn map() -> FeatureMap {
        FeatureMap::new(8, 4, 6, 10, &mut stream(0, "fm", 0), 1)
    }

    #[test]
    fn width_matches_layout() {
        let fm = map();
        let p = Prompt::new(0, vec![1, 2]);
        let r = Response::new(vec![3, 3, 4]);
        assert_eq!(fm.features(&p, &r).len(), fm.width());
        assert_eq!(fm.width(), 3 * 4 + NUM_STATS + 6 + 8);
    }

    #[test]
    fn stats_count_repeats() {
        let s = ResponseStats::of(&[3, 3, 3, 4, 1], &[1, 2], 8);
        assert_eq!(s.distinct, 3);
        assert_eq!(s.max_count, 3);
        assert_eq!(s.adjacent_repeats, 2);
        assert_eq!(s.prompt_overlap, 1);
        assert_eq!(s.excess_repeats, 1);
    }

    #[test]
    fn same_seed_same_map() {
        assert_eq!(map(), map());
    }
}
