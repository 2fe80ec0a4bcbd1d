//! Autoregressive categorical policy over token sequences.
//!
//! At position `t` the network sees the mean prompt embedding, the embedding
//! of the previous token (or a begin marker) and a geometrically decayed sum
//! of all earlier token embeddings. One `tanh` layer with a learned positional
//! bias feeds a linear logit head over the vocabulary.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_softmax, sample_from_log_probs, Gradients, ParamStore};
use crate::rng::Rng;
use crate::synth_env::{Prompt, Response, Token};

const PROMPT_EMBED: usize = 0;
const TOKEN_EMBED: usize = 1;
const SUMMARY_EMBED: usize = 2;
const W_IN: usize = 3;
const B_IN: usize = 4;
const POSITION: usize = 5;
const W_OUT: usize = 6;
const B_OUT: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub vocab: usize,
    pub max_len: usize,
    pub embed: usize,
    pub hidden: usize,
    /// Decay of the running prefix summary.
    pub decay: f64,
    /// Token that terminates a response; `None` means fixed-length output.
    pub end_token: Option<Token>,
    pub temperature: f64,
}

impl PolicySpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 || self.max_len < 1 || self.embed < 1 || self.hidden < 1 {
            return Err(Error::config(
                "policy needs vocab >= 2, max_len >= 1 and non-empty layers",
            ));
        }
        if let Some(e) = self.end_token {
            if e as usize >= self.vocab {
                return Err(Error::config("end token outside vocabulary"));
            }
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature must be > 0"));
        }
        Ok(())
    }

    fn input_width(&self) -> usize {
        3 * self.embed
    }

    /// Zeroed parameter layout.
    pub fn zeros(&self) -> ParamStore {
        let (v, e, h, l) = (self.vocab, self.embed, self.hidden, self.max_len);
        let mut p = ParamStore::new();
        p.add("prompt_embed", &[v, e]);
        p.add("token_embed", &[v + 1, e]);
        p.add("summary_embed", &[v, e]);
        p.add("w_in", &[h, 3 * e]);
        p.add("b_in", &[h]);
        p.add("position", &[l, h]);
        p.add("w_out", &[v, h]);
        p.add("b_out", &[v]);
        p
    }

    pub fn init(&self, rng: &mut Rng) -> ParamStore {
        let mut p = self.zeros();
        let scales = [
            (PROMPT_EMBED, 1.0),
            (TOKEN_EMBED, 1.0),
            (SUMMARY_EMBED, 1.0),
            (W_IN, 1.0 / (self.input_width() as f64).sqrt()),
            (W_OUT, 1.0 / (self.hidden as f64).sqrt()),
        ];
        for (index, scale) in scales {
            for v in p.values_mut(index) {
                let z: f64 = rng.sample(StandardNormal);
                *v = z * scale;
            }
        }
        p
    }
}

/// Forward quantities cached for one position.
struct StepCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
    log_probs: Vec<f64>,
}

/// A sampled response with its log-probability under the sampling policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub response: Response,
    pub log_prob: f64,
}

/// Policy parameters plus the frozen anchor they started from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    spec: PolicySpec,
    params: ParamStore,
    anchor: ParamStore,
}

impl PolicyNet {
    /// Builds a policy whose anchor is a copy of `params`.
    pub fn new(spec: PolicySpec, params: ParamStore) -> Result<Self> {
        spec.validate()?;
        let expected = spec.zeros();
        if expected.len() != params.len()
            || expected
                .arrays()
                .iter()
                .zip(params.arrays())
                .any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::config(
                "policy parameters do not match the spec layout",
            ));
        }
        Ok(Self {
            anchor: params.clone(),
            spec,
            params,
        })
    }

    pub fn random(spec: PolicySpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let params = spec.init(rng);
        Self::new(spec, params)
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn anchor(&self) -> &ParamStore {
        &self.anchor
    }

    /// Re-anchors at the current parameters and clears optimizer state.
    pub fn freeze_as_anchor(&mut self) {
        self.params.reset_optimizer();
        self.anchor = self.params.clone();
    }

    /// A policy acting with the anchor parameters.
    pub fn anchor_policy(&self) -> PolicyNet {
        PolicyNet {
            spec: self.spec.clone(),
            params: self.anchor.clone(),
            anchor: self.anchor.clone(),
        }
    }

    fn prompt_mean(&self, params: &ParamStore, prompt: &Prompt) -> Vec<f64> {
        let e = self.spec.embed;
        let table = params.values(PROMPT_EMBED);
        let mut out = vec![0.0; e];
        if prompt.tokens.is_empty() {
            return out;
        }
        for &t in &prompt.tokens {
            let row = &table[t as usize * e..(t as usize + 1) * e];
            for (o, r) in out.iter_mut().zip(row) {
                *o += r;
            }
        }
        let n = prompt.tokens.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    /// Logits at position `t` given the encoded input; masked entries are `-inf`.
    fn step(&self, params: &ParamStore, input: Vec<f64>, t: usize) -> StepCache {
        let (v, h, w) = (self.spec.vocab, self.spec.hidden, self.spec.input_width());
        let w_in = params.values(W_IN);
        let b_in = params.values(B_IN);
        let pos = &params.values(POSITION)[t * h..(t + 1) * h];
        let mut hidden = Vec::with_capacity(h);
        for o in 0..h {
            let mut z = b_in[o] + pos[o];
            for (wi, xi) in w_in[o * w..(o + 1) * w].iter().zip(&input) {
                z += wi * xi;
            }
            hidden.push(z.tanh());
        }
        let w_out = params.values(W_OUT);
        let b_out = params.values(B_OUT);
        let mut logits = Vec::with_capacity(v);
        for o in 0..v {
            let mut z = b_out[o];
            for (wi, hi) in w_out[o * h..(o + 1) * h].iter().zip(&hidden) {
                z += wi * hi;
            }
            logits.push(z);
        }
        if let Some(end) = self.spec.end_token {
            if t == 0 {
                logits[end as usize] = f64::NEG_INFINITY;
            }
        }
        let log_probs = log_softmax(&logits, self.spec.temperature);
        StepCache {
            input,
            hidden,
            log_probs,
        }
    }

    fn encode(
        &self,
        params: &ParamStore,
        prompt_mean: &[f64],
        last: usize,
        summary: &[f64],
    ) -> Vec<f64> {
        let e = self.spec.embed;
        let mut input = Vec::with_capacity(3 * e);
        input.extend_from_slice(prompt_mean);
        input.extend_from_slice(&params.values(TOKEN_EMBED)[last * e..(last + 1) * e]);
        input.extend_from_slice(summary);
        input
    }

    fn push_summary(&self, params: &ParamStore, summary: &mut [f64], token: Token) {
        let e = self.spec.embed;
        let row = &params.values(SUMMARY_EMBED)[token as usize * e..(token as usize + 1) * e];
        for (s, r) in summary.iter_mut().zip(row) {
            *s = self.spec.decay * *s + r;
        }
    }

    /// The emitted token sequence for `response`, including the end token when present.
    pub fn emitted_tokens(&self, response: &Response) -> Vec<Token> {
        let mut seq = response.tokens.clone();
        if let Some(end) = self.spec.end_token {
            if seq.len() < self.spec.max_len {
                seq.push(end);
            }
        }
        seq
    }

    fn validate_response(&self, response: &Response) -> Result<()> {
        if response.tokens.len() > self.spec.max_len {
            return Err(Error::config("response longer than policy max_len"));
        }
        if self.spec.end_token.is_some() && response.tokens.is_empty() {
            return Err(Error::config(
                "empty response cannot be produced by the policy",
            ));
        }
        if response
            .tokens
            .iter()
            .any(|t| *t as usize >= self.spec.vocab || Some(*t) == self.spec.end_token)
        {
            return Err(Error::config("response contains an invalid token"));
        }
        Ok(())
    }

    fn teacher_forced(
        &self,
        params: &ParamStore,
        prompt: &Prompt,
        seq: &[Token],
    ) -> Vec<StepCache> {
        let pm = self.prompt_mean(params, prompt);
        let mut summary = vec![0.0; self.spec.embed];
        let mut last = self.spec.vocab;
        let mut caches = Vec::with_capacity(seq.len());
        for (t, &tok) in seq.iter().enumerate() {
            let input = self.encode(params, &pm, last, &summary);
            caches.push(self.step(params, input, t));
            self.push_summary(params, &mut summary, tok);
            last = tok as usize;
        }
        caches
    }

    /// Draws one response.
    pub fn sample(&self, prompt: &Prompt, rng: &mut Rng) -> Rollout {
        let pm = self.prompt_mean(&self.params, prompt);
        let mut summary = vec![0.0; self.spec.embed];
        let mut last = self.spec.vocab;
        let mut tokens = Vec::with_capacity(self.spec.max_len);
        let mut log_prob = 0.0;
        for t in 0..self.spec.max_len {
            let input = self.encode(&self.params, &pm, last, &summary);
            let cache = self.step(&self.params, input, t);
            let tok = sample_from_log_probs(&cache.log_probs, rng) as Token;
            log_prob += cache.log_probs[tok as usize];
            if Some(tok) == self.spec.end_token {
                break;
            }
            tokens.push(tok);
            self.push_summary(&self.params, &mut summary, tok);
            last = tok as usize;
        }
        Rollout {
            response: Response::new(tokens),
            log_prob,
        }
    }

    pub fn sample_n(&self, prompt: &Prompt, n: usize, rng: &mut Rng) -> Vec<Response> {
        (0..n).map(|_| self.sample(prompt, rng).response).collect()
    }

    fn log_prob_with(
        &self,
        params: &ParamStore,
        prompt: &Prompt,
        response: &Response,
    ) -> Result<f64> {
        self.validate_response(response)?;
        let seq = self.emitted_tokens(response);
        let caches = self.teacher_forced(params, prompt, &seq);
        Ok(caches
            .iter()
            .zip(&seq)
            .map(|(c, &tok)| c.log_probs[tok as usize])
            .sum())
    }

    /// Sequence log-probability under the current parameters.
    pub fn log_prob(&self, prompt: &Prompt, response: &Response) -> Result<f64> {
        self.log_prob_with(&self.params, prompt, response)
    }

    /// Sequence log-probability under the anchor.
    pub fn anchor_log_prob(&self, prompt: &Prompt, response: &Response) -> Result<f64> {
        self.log_prob_with(&self.anchor, prompt, response)
    }

    /// Log-probability computed with arbitrary congruent parameters (gradient checks).
    pub fn log_prob_under(
        &self,
        params: &ParamStore,
        prompt: &Prompt,
        response: &Response,
    ) -> Result<f64> {
        self.log_prob_with(params, prompt, response)
    }

    /// Sum over visited positions of `KL(policy(.|prefix) || anchor(.|prefix))`.
    pub fn path_kl(&self, prompt: &Prompt, response: &Response) -> Result<f64> {
        self.validate_response(response)?;
        let seq = self.emitted_tokens(response);
        let ours = self.teacher_forced(&self.params, prompt, &seq);
        let theirs = self.teacher_forced(&self.anchor, prompt, &seq);
        let mut kl = 0.0;
        for (a, b) in ours.iter().zip(&theirs) {
            for (la, lb) in a.log_probs.iter().zip(&b.log_probs) {
                if *la != f64::NEG_INFINITY {
                    kl += la.exp() * (la - lb);
                }
            }
        }
        Ok(kl)
    }

    /// Adds `weight * d log p(response | prompt) / d params` into `grads`; returns the log-prob.
    pub fn accumulate_log_prob_grad(
        &self,
        prompt: &Prompt,
        response: &Response,
        weight: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        self.validate_response(response)?;
        if !weight.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite gradient weight {weight}"
            )));
        }
        let params = &self.params;
        let (v, e, h, w) = (
            self.spec.vocab,
            self.spec.embed,
            self.spec.hidden,
            self.spec.input_width(),
        );
        let seq = self.emitted_tokens(response);
        let caches = self.teacher_forced(params, prompt, &seq);
        let log_prob: f64 = caches
            .iter()
            .zip(&seq)
            .map(|(c, &tok)| c.log_probs[tok as usize])
            .sum();
        if weight == 0.0 {
            return Ok(log_prob);
        }
        let inv_temp = 1.0 / self.spec.temperature;
        let w_out = params.values(W_OUT);
        let w_in = params.values(W_IN);
        let mut d_prompt = vec![0.0; e];
        let mut d_summary_steps: Vec<Vec<f64>> = Vec::with_capacity(seq.len());
        for (t, (cache, &tok)) in caches.iter().zip(&seq).enumerate() {
            // d log p / d logits = (onehot - p) / temperature
            let mut d_logits = vec![0.0; v];
            for (a, lp) in cache.log_probs.iter().enumerate() {
                let p = if *lp == f64::NEG_INFINITY {
                    0.0
                } else {
                    lp.exp()
                };
                let target = if a == tok as usize { 1.0 } else { 0.0 };
                d_logits[a] = weight * (target - p) * inv_temp;
            }
            let mut d_hidden = vec![0.0; h];
            {
                let gw = grads.array_mut(W_OUT);
                for a in 0..v {
                    let d = d_logits[a];
                    if d == 0.0 {
                        continue;
                    }
                    for (g, hv) in gw[a * h..(a + 1) * h].iter_mut().zip(&cache.hidden) {
                        *g += d * hv;
                    }
                    for (dh, wv) in d_hidden.iter_mut().zip(&w_out[a * h..(a + 1) * h]) {
                        *dh += d * wv;
                    }
                }
            }
            for (g, d) in grads.array_mut(B_OUT).iter_mut().zip(&d_logits) {
                *g += d;
            }
            let d_pre: Vec<f64> = d_hidden
                .iter()
                .zip(&cache.hidden)
                .map(|(d, hv)| d * (1.0 - hv * hv))
                .collect();
            {
                let gw = grads.array_mut(W_IN);
                for o in 0..h {
                    let d = d_pre[o];
                    for (g, x) in gw[o * w..(o + 1) * w].iter_mut().zip(&cache.input) {
                        *g += d * x;
                    }
                }
            }
            for (g, d) in grads.array_mut(B_IN).iter_mut().zip(&d_pre) {
                *g += d;
            }
            for (g, d) in grads.array_mut(POSITION)[t * h..(t + 1) * h]
                .iter_mut()
                .zip(&d_pre)
            {
                *g += d;
            }
            let mut d_input = vec![0.0; w];
            for o in 0..h {
                let d = d_pre[o];
                for (di, wv) in d_input.iter_mut().zip(&w_in[o * w..(o + 1) * w]) {
                    *di += d * wv;
                }
            }
            for (dp, di) in d_prompt.iter_mut().zip(&d_input[..e]) {
                *dp += di;
            }
            let last = if t == 0 { v } else { seq[t - 1] as usize };
            for (g, di) in grads.array_mut(TOKEN_EMBED)[last * e..(last + 1) * e]
                .iter_mut()
                .zip(&d_input[e..2 * e])
            {
                *g += di;
            }
            d_summary_steps.push(d_input[2 * e..].to_vec());
        }
        // summary_t = sum_{j<t} decay^(t-1-j) * S[y_j]; walk backwards accumulating.
        let mut carry = vec![0.0; e];
        for t in (1..seq.len()).rev() {
            for (c, d) in carry.iter_mut().zip(&d_summary_steps[t]) {
                *c = self.spec.decay * *c + d;
            }
            let tok = seq[t - 1] as usize;
            for (g, c) in grads.array_mut(SUMMARY_EMBED)[tok * e..(tok + 1) * e]
                .iter_mut()
                .zip(&carry)
            {
                *g += c;
            }
        }
        if !prompt.tokens.is_empty() {
            let n = prompt.tokens.len() as f64;
            let gp = grads.array_mut(PROMPT_EMBED);
            for &pt in &prompt.tokens {
                for (g, d) in gp[pt as usize * e..(pt as usize + 1) * e]
                    .iter_mut()
                    .zip(&d_prompt)
                {
                    *g += d / n;
                }
            }
        }
        Ok(log_prob)
    }

    /// Exact distribution over first tokens (used by bandit-style tests and the demo).
    pub fn first_token_log_probs(&self, prompt: &Prompt) -> Vec<f64> {
        let pm = self.prompt_mean(&self.params, prompt);
        let summary = vec![0.0; self.spec.embed];
        let input = self.encode(&self.params, &pm, self.spec.vocab, &summary);
        self.step(&self.params, input, 0).log_probs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference, relative_error};
    use crate::rng::stream;

    pub(crate) fn small_spec() -> PolicySpec {
        PolicySpec {
            vocab: 6,
            max_len: 5,
            embed: 3,
            hidden: 4,
            decay: 0.6,
            end_token: Some(0),
            temperature: 1.0,
        }
    }

    #[test]
    fn sampled_log_prob_matches_teacher_forcing() {
        let policy = PolicyNet::random(small_spec(), &mut stream(0, "pol", 0)).unwrap();
        let prompt = Prompt::new(0, vec![1, 4, 2]);
        let mut rng = stream(0, "pol", 1);
        for _ in 0..20 {
            let r = policy.sample(&prompt, &mut rng);
            assert!(!r.response.tokens.is_empty());
            assert!(r
                .response
                .tokens
                .iter()
                .all(|t| *t != 0 && (*t as usize) < 6));
            let lp = policy.log_prob(&prompt, &r.response).unwrap();
            assert!((lp - r.log_prob).abs() < 1e-12);
        }
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let policy = PolicyNet::random(small_spec(), &mut stream(1, "pol", 0)).unwrap();
        let prompt = Prompt::new(0, vec![3, 5]);
        let response = Response::new(vec![2, 2, 4]);
        let mut g = Gradients::zeros_like(policy.params());
        policy
            .accumulate_log_prob_grad(&prompt, &response, 1.7, &mut g)
            .unwrap();
        let flat = g.flatten();
        let all: Vec<usize> = (0..flat.len()).collect();
        let numeric = finite_difference(policy.params(), &all, 1e-5, |p| {
            1.7 * policy.log_prob_under(p, &prompt, &response).unwrap()
        });
        for (i, (a, n)) in flat.iter().zip(&numeric).enumerate() {
            assert!(relative_error(*a, *n) < 1e-4, "param {i}: {a} vs {n}");
        }
    }

    #[test]
    fn probabilities_sum_to_one_over_all_sequences() {
        // Enumerate every response of a tiny policy.
        let spec = PolicySpec {
            vocab: 3,
            max_len: 3,
            embed: 2,
            hidden: 3,
            decay: 0.5,
            end_token: Some(0),
            temperature: 1.0,
        };
        let policy = PolicyNet::random(spec, &mut stream(2, "pol", 0)).unwrap();
        let prompt = Prompt::new(0, vec![1]);
        let mut total = 0.0;
        let mut stack = vec![vec![]];
        while let Some(tokens) = stack.pop() {
            if !tokens.is_empty() {
                total += policy
                    .log_prob(&prompt, &Response::new(tokens.clone()))
                    .unwrap()
                    .exp();
            }
            if tokens.len() < 3 {
                for t in 1..3u16 {
                    let mut next = tokens.clone();
                    next.push(t);
                    stack.push(next);
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-12, "total {total}");
    }

    #[test]
    fn kl_to_own_anchor_is_zero() {
        let policy = PolicyNet::random(small_spec(), &mut stream(3, "pol", 0)).unwrap();
        let prompt = Prompt::new(0, vec![1]);
        let r = Response::new(vec![1, 2, 3]);
        assert_eq!(policy.path_kl(&prompt, &r).unwrap(), 0.0);
    }

    #[test]
    fn invalid_responses_are_rejected() {
        let policy = PolicyNet::random(small_spec(), &mut stream(4, "pol", 0)).unwrap();
        let prompt = Prompt::new(0, vec![1]);
        assert!(policy.log_prob(&prompt, &Response::new(vec![])).is_err());
        assert!(policy
            .log_prob(&prompt, &Response::new(vec![0, 1]))
            .is_err());
        assert!(policy.log_prob(&prompt, &Response::new(vec![9])).is_err());
        assert!(policy
            .log_prob(&prompt, &Response::new(vec![1; 6]))
            .is_err());
    }
}
