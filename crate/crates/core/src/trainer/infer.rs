//! Best-of-N decoding: majority vote over parseable labels, then the
//! candidate with the best gold-free score among those carrying the
//! winning label.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::corpus::Label;
use crate::policy::{DecodeConfig, EncodedPrompt, PolicyError, ToyPolicy};
use crate::rewards::{gold_free_score, RewardConfig};
use crate::structured::{scan, FormatReport, StructuredOutput};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InferError {
    #[error("no candidate has a parseable label")]
    AllUnparseable(FormatReport),
    #[error("best-of-n needs n >= 1")]
    NoCandidates,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Selected candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub label: Label,
    /// Votes per label, indexed by [`Label::index`].
    pub votes: [usize; 2],
}

/// Picks the final candidate among `texts`.
///
/// Vote ties go to the label whose first vote came earliest; score ties to
/// the earliest candidate.
pub fn select_best(texts: &[String], config: &RewardConfig) -> Result<Selection, InferError> {
    let first = texts.first().ok_or(InferError::NoCandidates)?;
    let labels: Vec<Option<Label>> = texts.iter().map(|t| scan(t).label).collect();
    let mut votes = [0usize; 2];
    for l in labels.iter().flatten() {
        votes[l.index()] += 1;
    }
    if votes == [0, 0] {
        return Err(InferError::AllUnparseable(scan(first).report));
    }
    let first_vote = |l: Label| labels.iter().position(|x| *x == Some(l)).unwrap_or(usize::MAX);
    let label = if votes[0] != votes[1] {
        if votes[0] > votes[1] { Label::Hateful } else { Label::NonHateful }
    } else if first_vote(Label::Hateful) < first_vote(Label::NonHateful) {
        Label::Hateful
    } else {
        Label::NonHateful
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in texts.iter().enumerate() {
        if labels[i] != Some(label) {
            continue;
        }
        let score = gold_free_score(t, config);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((i, score));
        }
    }
    let (index, _) = best.expect("the winning label has at least one vote");
    Ok(Selection { index, label, votes })
}

/// Structured view of a candidate with a parseable label, compliant or not.
pub fn lenient_output(text: &str) -> Option<StructuredOutput> {
    let s = scan(text);
    Some(StructuredOutput {
        think: s.think.unwrap_or("").to_string(),
        label: s.label?,
        explanation: s.explanation.unwrap_or("").to_string(),
        raw: text.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestOfN {
    pub output: StructuredOutput,
    pub compliant: bool,
    pub selection: Selection,
    pub candidates: Vec<String>,
}

pub fn infer_best_of_n<R: Rng + ?Sized>(
    policy: &ToyPolicy,
    prompt: &EncodedPrompt,
    n: usize,
    decode: &DecodeConfig,
    reward: &RewardConfig,
    rng: &mut R,
) -> Result<BestOfN, InferError> {
    if n == 0 {
        return Err(InferError::NoCandidates);
    }
    let mut candidates = Vec::with_capacity(n);
    for _ in 0..n {
        let traj = policy.sample(prompt, decode, rng)?;
        candidates.push(policy.vocab().render(&traj.tokens));
    }
    let selection = select_best(&candidates, reward)?;
    let text = &candidates[selection.index];
    let output = lenient_output(text).expect("selected candidates carry a label");
    Ok(BestOfN { compliant: scan(text).report.compliant, output, selection, candidates })
}
