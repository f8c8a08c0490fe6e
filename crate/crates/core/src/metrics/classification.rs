//! Accuracy, weighted F1 and macro F1 over the two meme classes.
//!
//! Unparseable predictions (`None`) count as wrong and as a false negative
//! for the gold class; they never count as a false positive.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("{preds} predictions for {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
}

/// Per-class precision/recall/F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub total: usize,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    /// `confusion[gold][pred]` with classes ordered hateful, not hateful and
    /// a third column for unparseable predictions.
    pub confusion: [[usize; 3]; 2],
    pub unparseable: usize,
    /// Indexed by [`Label::index`].
    pub per_class: [ClassScores; 2],
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn classification_report(
    preds: &[Option<Label>],
    golds: &[Label],
) -> Result<ClassificationReport, MetricsError> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch { preds: preds.len(), golds: golds.len() });
    }
    let mut confusion = [[0usize; 3]; 2];
    for (p, g) in preds.iter().zip(golds) {
        confusion[g.index()][p.map_or(2, Label::index)] += 1;
    }
    let total = golds.len();
    let correct: usize = (0..2).map(|c| confusion[c][c]).sum();

    let per_class: Vec<ClassScores> = (0..2)
        .map(|c| {
            let tp = confusion[c][c];
            let predicted = confusion[0][c] + confusion[1][c];
            let support = confusion[c].iter().sum::<usize>();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores { precision, recall, f1, support }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|s| s.f1).sum::<f64>() / 2.0;
    let weighted_f1 = if total == 0 {
        0.0
    } else {
        per_class.iter().map(|s| s.f1 * s.support as f64).sum::<f64>() / total as f64
    };
    Ok(ClassificationReport {
        total,
        accuracy: ratio(correct, total),
        weighted_f1,
        macro_f1,
        confusion,
        unparseable: confusion[0][2] + confusion[1][2],
        per_class: [per_class[0], per_class[1]],
    })
}
