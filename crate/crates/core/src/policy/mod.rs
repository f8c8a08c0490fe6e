//! Feature-based autoregressive softmax policy.
//!
//! The next-token score of token `v` is the sum of `θ[f, v]` over the active
//! features `f` of the current state: a position bucket, the last
//! [`FeatureSpace::window`] generated tokens, and one indicator per trigger
//! word present in the prompt. Log-probabilities and their gradients are
//! exact.

mod kl;
mod sampling;
mod vocab;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use serde::{Deserialize, Serialize};

pub use kl::{kl_divergence, kl_grad_logits, KlError};
pub use sampling::{nucleus, DecodeConfig, Termination, Trajectory};
pub use vocab::{TokenId, Vocabulary, EOS, STRUCTURAL_TOKENS};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("token id {0} is outside the vocabulary")]
    TokenOutOfRange(u16),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid decode config: {0}")]
    InvalidDecodeConfig(String),
    #[error("parameter vector has {got} entries, expected {expected}")]
    ParamCount { got: usize, expected: usize },
}

/// Layout of the sparse state features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub vocab_size: usize,
    pub position_buckets: usize,
    pub window: usize,
    pub triggers: Vec<String>,
}

impl FeatureSpace {
    pub fn new(vocab_size: usize, triggers: Vec<String>) -> Self {
        Self { vocab_size, position_buckets: 32, window: 2, triggers }
    }

    pub fn len(&self) -> usize {
        self.position_buckets + self.window * (self.vocab_size + 1) + self.triggers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feature index for "token `k` steps back is `tok`" (`None` before the start).
    fn history_feature(&self, k: usize, tok: Option<TokenId>) -> usize {
        let slot = tok.map_or(self.vocab_size, |t| t.index());
        self.position_buckets + k * (self.vocab_size + 1) + slot
    }

    fn trigger_feature(&self, i: usize) -> usize {
        self.position_buckets + self.window * (self.vocab_size + 1) + i
    }

    /// Trigger indicators of a prompt, computed once per prompt.
    pub fn encode_prompt(&self, prompt: &str) -> EncodedPrompt {
        let mut present: Vec<usize> = self
            .triggers
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                prompt
                    .split_whitespace()
                    .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
                    .any(|w| w == t.as_str())
            })
            .map(|(i, _)| self.trigger_feature(i))
            .collect();
        present.sort_unstable();
        EncodedPrompt { trigger_features: present }
    }

    /// Active feature indices at the state after `prefix`.
    pub fn active(&self, prompt: &EncodedPrompt, prefix: &[TokenId]) -> Vec<usize> {
        let mut out = Vec::with_capacity(1 + self.window + prompt.trigger_features.len());
        out.push(prefix.len().min(self.position_buckets - 1));
        for k in 0..self.window {
            let tok = prefix.len().checked_sub(k + 1).map(|i| prefix[i]);
            out.push(self.history_feature(k, tok));
        }
        out.extend_from_slice(&prompt.trigger_features);
        out
    }
}

/// Prompt-level features of the policy.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EncodedPrompt {
    pub trigger_features: Vec<usize>,
}

/// Stable log-softmax of `scores`.
pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|s| libm::exp(s - max)).sum();
    let lse = max + libm::log(sum);
    scores.iter().map(|s| s - lse).collect()
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    log_softmax(scores).into_iter().map(libm::exp).collect()
}

/// One visited state of a token sequence.
pub struct State<'a> {
    pub position: usize,
    pub features: &'a [usize],
    pub log_probs: &'a [f64],
    pub token: TokenId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    vocab: Vocabulary,
    space: FeatureSpace,
    params: Vec<f64>,
}

impl ToyPolicy {
    /// Zero-initialized (uniform) policy.
    pub fn new(vocab: Vocabulary, triggers: Vec<String>) -> Result<Self, PolicyError> {
        for t in &triggers {
            vocab.id(t)?;
        }
        let space = FeatureSpace::new(vocab.len(), triggers);
        let params = vec![0.0; space.len() * vocab.len()];
        Ok(Self { vocab, space, params })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<(), PolicyError> {
        if params.len() != self.params.len() {
            return Err(PolicyError::ParamCount { got: params.len(), expected: self.params.len() });
        }
        self.params = params;
        Ok(())
    }

    /// Flat index of `θ[feature, token]`.
    pub fn param_index(&self, feature: usize, token: TokenId) -> usize {
        feature * self.vocab.len() + token.index()
    }

    pub fn encode_prompt(&self, prompt: &str) -> EncodedPrompt {
        self.space.encode_prompt(prompt)
    }

    pub fn scores(&self, features: &[usize]) -> Vec<f64> {
        let v = self.vocab.len();
        let mut s = vec![0.0; v];
        for &f in features {
            for (acc, w) in s.iter_mut().zip(&self.params[f * v..(f + 1) * v]) {
                *acc += w;
            }
        }
        s
    }

    pub fn next_log_distribution(&self, prompt: &EncodedPrompt, prefix: &[TokenId]) -> Vec<f64> {
        log_softmax(&self.scores(&self.space.active(prompt, prefix)))
    }

    pub fn next_distribution(&self, prompt: &EncodedPrompt, prefix: &[TokenId]) -> Vec<f64> {
        softmax(&self.scores(&self.space.active(prompt, prefix)))
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<(), PolicyError> {
        match tokens.iter().find(|t| t.index() >= self.vocab.len()) {
            Some(t) => Err(PolicyError::TokenOutOfRange(t.0)),
            None => Ok(()),
        }
    }

    /// Visits every state of `tokens` in order.
    pub fn for_each_state<F>(&self, prompt: &EncodedPrompt, tokens: &[TokenId], mut f: F) -> Result<(), PolicyError>
    where
        F: FnMut(State<'_>),
    {
        self.check_tokens(tokens)?;
        for (t, &token) in tokens.iter().enumerate() {
            let features = self.space.active(prompt, &tokens[..t]);
            let log_probs = log_softmax(&self.scores(&features));
            f(State { position: t, features: &features, log_probs: &log_probs, token });
        }
        Ok(())
    }

    /// Per-token log-probabilities of `tokens` given the prompt.
    pub fn logprob(&self, prompt: &EncodedPrompt, tokens: &[TokenId]) -> Result<Vec<f64>, PolicyError> {
        let mut out = Vec::with_capacity(tokens.len());
        self.for_each_state(prompt, tokens, |s| out.push(s.log_probs[s.token.index()]))?;
        Ok(out)
    }

    /// Gradient of the summed log-probability of `tokens` with respect to θ.
    pub fn grad_logprob(&self, prompt: &EncodedPrompt, tokens: &[TokenId]) -> Result<Vec<f64>, PolicyError> {
        let mut grad = vec![0.0; self.params.len()];
        self.for_each_state(prompt, tokens, |s| {
            self.accumulate_logprob_grad(&s, 1.0, &mut grad);
        })?;
        Ok(grad)
    }

    /// Adds `weight · ∇ log π(token | state)` to `grad`.
    pub fn accumulate_logprob_grad(&self, state: &State<'_>, weight: f64, grad: &mut [f64]) {
        let v = self.vocab.len();
        for &f in state.features {
            let row = &mut grad[f * v..(f + 1) * v];
            for (u, g) in row.iter_mut().enumerate() {
                let taken = if u == state.token.index() { 1.0 } else { 0.0 };
                *g += weight * (taken - libm::exp(state.log_probs[u]));
            }
        }
    }

    /// Adds `Σ_u weight_u · ∂s_u/∂θ` to `grad` for per-token score weights.
    pub fn accumulate_score_grad(&self, features: &[usize], score_grad: &[f64], grad: &mut [f64]) {
        let v = self.vocab.len();
        for &f in features {
            for (g, w) in grad[f * v..(f + 1) * v].iter_mut().zip(score_grad) {
                *g += w;
            }
        }
    }

    /// Frozen copy unaffected by later updates of `self`.
    pub fn snapshot(&self) -> FrozenPolicy {
        FrozenPolicy(self.clone())
    }
}

/// Read-only policy copy used as the sampling (old) and reference policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenPolicy(ToyPolicy);

impl FrozenPolicy {
    pub fn snapshot(&self) -> FrozenPolicy {
        self.clone()
    }

    /// Live policy starting from these parameters.
    pub fn thaw(&self) -> ToyPolicy {
        self.0.clone()
    }
}

impl Deref for FrozenPolicy {
    type Target = ToyPolicy;
    fn deref(&self) -> &ToyPolicy {
        &self.0
    }
}
