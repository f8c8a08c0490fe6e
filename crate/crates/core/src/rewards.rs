//! Composite reward over structured outputs:
//!
//! ```text
//! R(y) = α_fmt·R_fmt + α_lbl·R_lbl + α_len·R_len + α_met·R_met
//! ```
//!
//! `R_len = exp(-(L - target)² / (2σ²))` with `L` the whitespace word count
//! of the explanation field, and `R_met` is METEOR against the gold
//! explanation.

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, MemeRecord};
use crate::metrics::meteor::{meteor, MeteorOptions};
use crate::structured::{check_format, scan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub alpha_fmt: f64,
    pub alpha_lbl: f64,
    pub alpha_len: f64,
    pub alpha_met: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { alpha_fmt: 0.5, alpha_lbl: 0.4, alpha_len: 0.05, alpha_met: 0.05 }
    }
}

impl RewardWeights {
    pub fn is_valid(&self) -> bool {
        [self.alpha_fmt, self.alpha_lbl, self.alpha_len, self.alpha_met]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LengthRewardParams {
    pub target_words: f64,
    pub sigma: f64,
}

impl Default for LengthRewardParams {
    fn default() -> Self {
        Self { target_words: 100.0, sigma: 20.0 }
    }
}

/// Reward options beyond the weights.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub weights: RewardWeights,
    pub length: LengthRewardParams,
    /// Format reward as the share of satisfied rules instead of 0/1.
    pub graded_format: bool,
    pub meteor: MeteorOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_fmt: f64,
    pub r_lbl: f64,
    pub r_len: f64,
    pub r_met: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn compose(r_fmt: f64, r_lbl: f64, r_len: f64, r_met: f64, w: &RewardWeights) -> Self {
        let total =
            w.alpha_fmt * r_fmt + w.alpha_lbl * r_lbl + w.alpha_len * r_len + w.alpha_met * r_met;
        Self { r_fmt, r_lbl, r_len, r_met, total }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RewardError {
    #[error("gold explanation is empty")]
    MissingReference,
}

pub fn reward_format(text: &str) -> f64 {
    if check_format(text).compliant {
        1.0
    } else {
        0.0
    }
}

pub fn reward_format_graded(text: &str) -> f64 {
    check_format(text).satisfied_fraction()
}

pub fn reward_label(pred: Option<Label>, gold: Label) -> f64 {
    if pred == Some(gold) {
        1.0
    } else {
        0.0
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn reward_length(explanation: &str, params: &LengthRewardParams) -> f64 {
    let d = word_count(explanation) as f64 - params.target_words;
    libm::exp(-(d * d) / (2.0 * params.sigma * params.sigma))
}

pub fn reward_meteor(explanation: &str, gold: &str, opts: &MeteorOptions) -> Result<f64, RewardError> {
    if gold.trim().is_empty() {
        return Err(RewardError::MissingReference);
    }
    Ok(meteor(explanation, gold, opts))
}

/// Scores one completion against its gold record.
///
/// Length and METEOR are computed on the explanation field whenever one can
/// be isolated, even if the output is otherwise non-compliant; both are zero
/// when no explanation field exists. An empty gold explanation scores zero
/// METEOR.
pub fn reward_total(completion: &str, gold: &MemeRecord, config: &RewardConfig) -> RewardBreakdown {
    let s = scan(completion);
    let r_fmt = if config.graded_format {
        s.report.satisfied_fraction()
    } else if s.report.compliant {
        1.0
    } else {
        0.0
    };
    let r_lbl = reward_label(s.label, gold.label);
    let (r_len, r_met) = match s.explanation {
        Some(e) => (
            reward_length(e, &config.length),
            reward_meteor(e, &gold.gold_explanation, &config.meteor).unwrap_or(0.0),
        ),
        None => (0.0, 0.0),
    };
    RewardBreakdown::compose(r_fmt, r_lbl, r_len, r_met, &config.weights)
}

/// Gold-free part of the reward used to rank best-of-N candidates.
pub fn gold_free_score(completion: &str, config: &RewardConfig) -> f64 {
    let s = scan(completion);
    let r_fmt = if config.graded_format {
        s.report.satisfied_fraction()
    } else if s.report.compliant {
        1.0
    } else {
        0.0
    };
    let r_len = s.explanation.map_or(0.0, |e| reward_length(e, &config.length));
    config.weights.alpha_fmt * r_fmt + config.weights.alpha_len * r_len
}
