//! Reasoning-trace distillation from a teacher model.

use serde_json::json;
use thinkguard_core::corpus::MemeRecord;

use super::{call_with_retry, ChatRequest, ModelClient, ModelSvcError, RetryPolicy};

pub const ANTI_LEAKAGE_INSTRUCTION: &str = "Work out the reasoning on your own. Do not copy or \
     reword any reference explanation; write the steps in your own words.";

const TEACHER_SYSTEM: &str = "You write short step-by-step reasoning for content moderation decisions \
     about memes. The final label is given; explain how the observable content leads to it.";

const TEACHER_TASK: &str = "Write the reasoning as plain lowercase words on one line, without the final \
     answer format.";

/// Shortest shared word run that counts as leakage. Gold explanations
/// shorter than this leak only when repeated in full.
pub const LEAK_MIN_WORDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Distilled {
    pub trace: String,
    pub attempts: u32,
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Length of the longest run of consecutive words shared by `trace` and
/// `gold` when it reaches the leakage threshold.
pub fn leak_overlap(trace: &str, gold: &str) -> Option<usize> {
    let (t, g) = (words(trace), words(gold));
    if g.is_empty() {
        return None;
    }
    // Longest common substring over words.
    let mut best = 0;
    let mut prev = vec![0usize; g.len() + 1];
    for tw in &t {
        let mut cur = vec![0usize; g.len() + 1];
        for (j, gw) in g.iter().enumerate() {
            if tw == gw {
                cur[j + 1] = prev[j] + 1;
                best = best.max(cur[j + 1]);
            }
        }
        prev = cur;
    }
    (best >= LEAK_MIN_WORDS.min(g.len())).then_some(best)
}

pub fn distill_request(model: &str, record: &MemeRecord, guidelines: &str) -> ChatRequest {
    let input = json!({
        "id": record.id,
        "text": record.ocr_text,
        "guidelines": guidelines,
        "label": record.label.as_str(),
        "protected_categories": record.protected_categories.iter().map(|c| c.as_str()).collect::<Vec<_>>(),
        "attack_types": record.attack_types.iter().map(|a| a.as_str()).collect::<Vec<_>>(),
    });
    let system = format!("{TEACHER_SYSTEM}\n{ANTI_LEAKAGE_INSTRUCTION}");
    ChatRequest::new(model, &system, TEACHER_TASK, &input)
}

/// Requests a reasoning trace for `record` and rejects empty or leaking ones.
pub fn distill_cot(
    client: &dyn ModelClient,
    model: &str,
    record: &MemeRecord,
    guidelines: &str,
    retry: &RetryPolicy,
) -> Result<Distilled, ModelSvcError> {
    let request = distill_request(model, record, guidelines);
    let answer = call_with_retry(client, &request, retry, &record.id)?;
    let trace = answer.text.trim().to_string();
    if trace.is_empty() {
        return Err(ModelSvcError::EmptyResponse { item: record.id.clone() });
    }
    if let Some(overlap) = leak_overlap(&trace, &record.gold_explanation) {
        return Err(ModelSvcError::LeakageDetected { item: record.id.clone(), overlap });
    }
    Ok(Distilled { trace, attempts: answer.attempts })
}
