//! Offline teacher and judge. Both are pure functions of their seed and the
//! request input.

use std::collections::BTreeSet;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thinkguard_core::corpus::find_trigger;
use thinkguard_core::metrics::Dimension;

use super::{CallError, ChatRequest, ModelClient};

fn mix(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

fn input_of(request: &ChatRequest) -> Result<Value, CallError> {
    request.input().ok_or_else(|| CallError::Fatal("request has no INPUT object".into()))
}

fn field<'a>(v: &'a Value, key: &str) -> &'a str {
    v.get(key).and_then(Value::as_str).unwrap_or("")
}

/// Writes traces from the synthetic-corpus vocabulary that name the
/// trigger word found in the meme text.
#[derive(Debug, Clone)]
pub struct MockTeacher {
    pub id: String,
    pub seed: u64,
    pub triggers: Vec<String>,
}

impl MockTeacher {
    pub fn new(seed: u64, triggers: Vec<String>) -> Self {
        Self { id: "mock-teacher".into(), seed, triggers }
    }

    pub fn trace(&self, item_id: &str, text: &str, hateful: bool, category: Option<&str>) -> String {
        let alt = mix(self.seed, &[item_id]) & 1 == 1;
        let target = category.unwrap_or("a protected group");
        match (hateful, find_trigger(text, &self.triggers)) {
            (true, Some(t)) if alt => format!("the trigger word {t} targets {target} so the text is hateful"),
            (true, Some(t)) => format!("scan the text find the trigger word {t} which targets {target} so the text is hateful"),
            (true, None) => format!("scan the text find the attack which targets {target} so the text is hateful"),
            (false, _) if alt => "no trigger word appears so the text is benign".into(),
            (false, _) => "scan the text find no trigger word so the text is benign".into(),
        }
    }
}

impl ModelClient for MockTeacher {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, CallError> {
        let v = input_of(request)?;
        let category = v.get("protected_categories").and_then(|c| c.get(0)).and_then(Value::as_str);
        Ok(self.trace(field(&v, "id"), field(&v, "text"), field(&v, "label") == "hateful", category))
    }
}

/// Scores from unigram overlap with the reference and a length band.
///
/// Informativeness follows recall, faithfulness precision and plausibility
/// F1, each mapped to `1 + round(4x)`. Clarity is 5 within half to twice
/// the reference length, 4 within a quarter to four times, 3 beyond and 2
/// below three words. Different seeds lower some middle scores by one;
/// scores of 1 and 5 never move.
#[derive(Debug, Clone)]
pub struct MockJudge {
    pub id: String,
    pub seed: u64,
}

impl MockJudge {
    pub fn new(id: impl Into<String>, seed: u64) -> Self {
        Self { id: id.into(), seed }
    }

    pub fn scores(&self, item_id: &str, candidate: &str, reference: &str) -> [u8; 4] {
        let words = |t: &str| -> Vec<String> {
            t.split_whitespace()
                .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
                .filter(|w| !w.is_empty())
                .collect()
        };
        let (c, r) = (words(candidate), words(reference));
        let (cs, rs): (BTreeSet<&String>, BTreeSet<&String>) = (c.iter().collect(), r.iter().collect());
        let overlap = cs.intersection(&rs).count() as f64;
        let p = if cs.is_empty() { 0.0 } else { overlap / cs.len() as f64 };
        let rec = if rs.is_empty() { 0.0 } else { overlap / rs.len() as f64 };
        let f1 = if p + rec == 0.0 { 0.0 } else { 2.0 * p * rec / (p + rec) };
        let quant = |x: f64| (1.0 + (4.0 * x).round()).clamp(1.0, 5.0) as u8;
        let ratio = c.len() as f64 / r.len().max(1) as f64;
        let clarity = if c.len() < 3 {
            2
        } else if (0.5..=2.0).contains(&ratio) {
            5
        } else if (0.25..=4.0).contains(&ratio) {
            4
        } else {
            3
        };
        let mut s = [quant(rec), clarity, quant(f1), quant(p)];
        for (v, d) in s.iter_mut().zip(Dimension::ALL) {
            if (2..=4).contains(v) && mix(self.seed, &[item_id, d.as_str()]).is_multiple_of(4) {
                *v -= 1;
            }
        }
        s
    }
}

impl ModelClient for MockJudge {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, CallError> {
        let v = input_of(request)?;
        let s = self.scores(field(&v, "id"), field(&v, "candidate"), field(&v, "reference"));
        let mut out = serde_json::Map::new();
        for (d, x) in Dimension::ALL.iter().zip(s) {
            out.insert(d.as_str().into(), json!(x));
        }
        Ok(Value::Object(out).to_string())
    }
}
