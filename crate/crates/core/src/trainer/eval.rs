//! Split-level evaluation: classification metrics and explanation METEOR.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::infer::{infer_best_of_n, InferError};
use super::PromptItem;
use crate::corpus::Label;
use crate::metrics::classification::{classification_report, ClassificationReport};
use crate::metrics::meteor::meteor;
use crate::policy::{DecodeConfig, PolicyError, ToyPolicy};
use crate::rewards::RewardConfig;
use crate::rng::{derive_rng, stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub decode: DecodeConfig,
    pub best_of: usize,
    pub reward: RewardConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { decode: DecodeConfig::default(), best_of: 1, reward: RewardConfig::default(), seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub gold: Label,
    pub predicted: Option<Label>,
    pub compliant: bool,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    /// Candidates decoded per record; 1 is single-sample decoding.
    pub best_of: usize,
    pub classification: ClassificationReport,
    /// Mean METEOR of the selected explanation against the gold explanation.
    pub mean_meteor: f64,
    /// Records whose selected output is not format-compliant.
    pub parse_failures: usize,
    pub predictions: Vec<Prediction>,
}

pub fn evaluate(
    policy: &ToyPolicy,
    items: &[PromptItem<'_>],
    config: &EvalConfig,
) -> Result<EvalReport, PolicyError> {
    let mut predictions = Vec::with_capacity(items.len());
    let mut meteor_sum = 0.0;
    for (i, item) in items.iter().enumerate() {
        let mut rng = derive_rng(config.seed, &[stage::EVAL, i as u64]);
        let r = infer_best_of_n(policy, &item.prompt, config.best_of.max(1), &config.decode, &config.reward, &mut rng);
        let (predicted, compliant, text, explanation) = match r {
            Ok(b) => {
                let text = b.candidates[b.selection.index].clone();
                (Some(b.output.label), b.compliant, text, b.output.explanation)
            }
            Err(InferError::Policy(e)) => return Err(e),
            Err(_) => (None, false, String::new(), String::new()),
        };
        if !explanation.is_empty() {
            meteor_sum += meteor(&explanation, &item.record.gold_explanation, &config.reward.meteor);
        }
        predictions.push(Prediction {
            id: item.record.id.clone(),
            gold: item.record.label,
            predicted,
            compliant,
            text,
        });
    }
    let preds: Vec<Option<Label>> = predictions.iter().map(|p| p.predicted).collect();
    let golds: Vec<Label> = predictions.iter().map(|p| p.gold).collect();
    let classification = classification_report(&preds, &golds).expect("equal lengths by construction");
    Ok(EvalReport {
        n: items.len(),
        best_of: config.best_of.max(1),
        classification,
        mean_meteor: if items.is_empty() { 0.0 } else { meteor_sum / items.len() as f64 },
        parse_failures: predictions.iter().filter(|p| !p.compliant).count(),
        predictions,
    })
}
