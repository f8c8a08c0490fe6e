//! Temperature and nucleus (top-p) sampling.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{log_softmax, EncodedPrompt, PolicyError, TokenId, ToyPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub temperature: f64,
    pub top_p: f64,
    /// Upper bound on trajectory length, forced prefix included.
    pub max_tokens: usize,
    pub seed: u64,
    /// Tokens placed at the start of every completion without being sampled.
    pub forced_prefix: Vec<String>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { temperature: 1.0, top_p: 0.85, max_tokens: 128, seed: 42, forced_prefix: Vec::new() }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: String| Err(PolicyError::InvalidDecodeConfig(m));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p {} is outside (0, 1]", self.top_p));
        }
        if self.max_tokens == 0 || self.forced_prefix.len() >= self.max_tokens {
            return bad(format!(
                "max_tokens {} must exceed the forced prefix length {}",
                self.max_tokens,
                self.forced_prefix.len()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Eos,
    MaxLength,
}

/// One sampled completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub tokens: Vec<TokenId>,
    /// Log-probabilities under the untruncated temperature-1 distribution of
    /// the generating policy.
    pub logprobs: Vec<f64>,
    /// Number of leading forced tokens.
    pub forced: usize,
    pub termination: Termination,
}

impl Trajectory {
    /// Tokens the policy actually chose.
    pub fn sampled(&self) -> &[TokenId] {
        &self.tokens[self.forced..]
    }
}

/// Smallest set of most-probable tokens whose mass reaches `top_p`, in
/// descending probability order (ties by token id).
pub fn nucleus(probs: &[f64], top_p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    let mut keep = order.len();
    for (n, &i) in order.iter().enumerate() {
        mass += probs[i];
        if mass >= top_p {
            keep = n + 1;
            break;
        }
    }
    order.truncate(keep);
    order
}

/// Draws from `probs` restricted to `support`, renormalized.
fn draw<R: Rng + ?Sized>(probs: &[f64], support: &[usize], rng: &mut R) -> usize {
    let total: f64 = support.iter().map(|&i| probs[i]).sum();
    let mut u = rng.gen::<f64>() * total;
    for &i in support {
        u -= probs[i];
        if u < 0.0 {
            return i;
        }
    }
    *support.last().expect("nucleus is never empty")
}

impl ToyPolicy {
    pub fn sample<R: Rng + ?Sized>(
        &self,
        prompt: &EncodedPrompt,
        config: &DecodeConfig,
        rng: &mut R,
    ) -> Result<Trajectory, PolicyError> {
        config.validate()?;
        let eos = self.vocab().eos();
        let mut tokens = config
            .forced_prefix
            .iter()
            .map(|t| self.vocab().id(t))
            .collect::<Result<Vec<_>, _>>()?;
        let mut logprobs = self.logprob(prompt, &tokens)?;
        let forced = tokens.len();
        let mut termination = Termination::MaxLength;
        while tokens.len() < config.max_tokens {
            let scores = self.scores(&self.space().active(prompt, &tokens));
            let log_p = log_softmax(&scores);
            let scaled: Vec<f64> = if config.temperature == 1.0 {
                log_p.iter().map(|l| libm::exp(*l)).collect()
            } else {
                let t: Vec<f64> = scores.iter().map(|s| s / config.temperature).collect();
                log_softmax(&t).into_iter().map(libm::exp).collect()
            };
            let support = nucleus(&scaled, config.top_p);
            let next = draw(&scaled, &support, rng);
            tokens.push(TokenId(next as u16));
            logprobs.push(log_p[next]);
            if TokenId(next as u16) == eos {
                termination = Termination::Eos;
                break;
            }
        }
        Ok(Trajectory { tokens, logprobs, forced, termination })
    }
}
