//! Explanation scoring by judge models and the per-dimension agreement table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thinkguard_core::corpus::MemeRecord;
use thinkguard_core::metrics::{agreement_rwg, AgreementMode, Dimension, RatingsMatrix};

use super::{call_with_retry, ChatRequest, ModelClient, ModelSvcError, RetryPolicy};

pub const RUBRIC_VERSION: &str = "judge_rubric_v1";
pub const RUBRIC_V1: &str = include_str!("../../resources/judge_rubric_v1.txt");

pub fn rubric(version: &str) -> Option<&'static str> {
    (version == RUBRIC_VERSION).then_some(RUBRIC_V1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub item_id: String,
    pub judge_id: String,
    pub informativeness: u8,
    pub clarity: u8,
    pub plausibility: u8,
    pub faithfulness: u8,
}

impl JudgeScore {
    pub fn from_array(item_id: &str, judge_id: &str, s: [u8; 4]) -> Self {
        Self {
            item_id: item_id.into(),
            judge_id: judge_id.into(),
            informativeness: s[0],
            clarity: s[1],
            plausibility: s[2],
            faithfulness: s[3],
        }
    }

    pub fn get(&self, d: Dimension) -> u8 {
        match d {
            Dimension::Informativeness => self.informativeness,
            Dimension::Clarity => self.clarity,
            Dimension::Plausibility => self.plausibility,
            Dimension::Faithfulness => self.faithfulness,
        }
    }
}

/// Four scores in [`Dimension::ALL`] order from the first JSON object in
/// `text`; `None` unless every dimension holds an integer in 1..=5.
pub fn parse_scores(text: &str) -> Option<[u8; 4]> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    let v: Value = serde_json::from_str(text.get(start..=end)?).ok()?;
    let mut out = [0u8; 4];
    for (slot, d) in out.iter_mut().zip(Dimension::ALL) {
        let n = v.get(d.as_str())?.as_u64()?;
        if !(1..=5).contains(&n) {
            return None;
        }
        *slot = n as u8;
    }
    Some(out)
}

pub fn judge_request(model: &str, record: &MemeRecord, explanation: &str, rubric: &str) -> ChatRequest {
    let input = json!({
        "id": record.id,
        "text": record.ocr_text,
        "label": record.label.as_str(),
        "reference": record.gold_explanation,
        "candidate": explanation,
    });
    ChatRequest::new(model, rubric, "Rate the candidate explanation.", &input)
}

/// Scores `explanation`; an unparseable reply is asked for once more.
pub fn judge_explanation(
    client: &dyn ModelClient,
    model: &str,
    record: &MemeRecord,
    explanation: &str,
    rubric_version: &str,
    retry: &RetryPolicy,
) -> Result<JudgeScore, ModelSvcError> {
    let text = rubric(rubric_version).ok_or_else(|| ModelSvcError::UnknownRubric(rubric_version.into()))?;
    if explanation.trim().is_empty() {
        return Err(ModelSvcError::EmptyExplanation { item: record.id.clone() });
    }
    let request = judge_request(model, record, explanation, text);
    let mut last = String::new();
    for _ in 0..2 {
        let answer = call_with_retry(client, &request, retry, &record.id)?;
        if let Some(s) = parse_scores(&answer.text) {
            return Ok(JudgeScore::from_array(&record.id, client.id(), s));
        }
        last = answer.text;
    }
    Err(ModelSvcError::UnparseableScore { item: record.id.clone(), response: last })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionRow {
    pub dimension: String,
    /// Mean rating per judge, in [`JudgmentTable::judges`] order.
    pub means: Vec<f64>,
    pub agreement: f64,
}

/// Per-judge mean ratings and the agreement index, one row per dimension
/// plus an average row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentTable {
    pub judges: Vec<String>,
    pub items: usize,
    pub mode: AgreementMode,
    pub rows: Vec<DimensionRow>,
    pub average: DimensionRow,
}

pub fn aggregate_judgments(scores: &[JudgeScore], mode: AgreementMode) -> Result<JudgmentTable, ModelSvcError> {
    let incomplete = |m: String| Err(ModelSvcError::IncompleteRatings(m));
    let judges: Vec<String> = scores.iter().map(|s| s.judge_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let items: Vec<String> = scores.iter().map(|s| s.item_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    if judges.len() < 2 {
        return incomplete(format!("need at least two judges, found {}", judges.len()));
    }
    let mut grid: BTreeMap<(&str, &str), &JudgeScore> = BTreeMap::new();
    for s in scores {
        if grid.insert((s.item_id.as_str(), s.judge_id.as_str()), s).is_some() {
            return incomplete(format!("item {} rated twice by {}", s.item_id, s.judge_id));
        }
        if let Some(d) = Dimension::ALL.into_iter().find(|d| !(1..=5).contains(&s.get(*d))) {
            return incomplete(format!("item {} has {} rating {} outside 1..=5", s.item_id, d, s.get(d)));
        }
    }
    for item in &items {
        for judge in &judges {
            if !grid.contains_key(&(item.as_str(), judge.as_str())) {
                return incomplete(format!("item {item} has no rating from {judge}"));
            }
        }
    }
    let n = items.len() as f64;
    let mut rows = Vec::with_capacity(4);
    for d in Dimension::ALL {
        let matrix: Vec<Vec<u8>> = items
            .iter()
            .map(|i| judges.iter().map(|j| grid[&(i.as_str(), j.as_str())].get(d)).collect())
            .collect();
        let means = (0..judges.len())
            .map(|j| matrix.iter().map(|row| f64::from(row[j])).sum::<f64>() / n)
            .collect();
        let m = RatingsMatrix::new(matrix).map_err(|e| ModelSvcError::IncompleteRatings(e.to_string()))?;
        rows.push(DimensionRow { dimension: d.as_str().into(), means, agreement: agreement_rwg(&m, mode) });
    }
    let average = DimensionRow {
        dimension: "average".into(),
        means: (0..judges.len()).map(|j| rows.iter().map(|r| r.means[j]).sum::<f64>() / 4.0).collect(),
        agreement: rows.iter().map(|r| r.agreement).sum::<f64>() / 4.0,
    };
    Ok(JudgmentTable { judges, items: items.len(), mode, rows, average })
}

impl fmt::Display for JudgmentTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<16}", "dimension")?;
        for j in &self.judges {
            write!(f, " {j:>12}")?;
        }
        writeln!(f, " {:>8}", "r*_wg")?;
        for row in self.rows.iter().chain([&self.average]) {
            write!(f, "{:<16}", row.dimension)?;
            for m in &row.means {
                write!(f, " {m:>12.3}")?;
            }
            writeln!(f, " {:>8.3}", row.agreement)?;
        }
        write!(f, "{} items, agreement pooled {}", self.items, match self.mode {
            AgreementMode::PerItem => "per item",
            AgreementMode::JudgeMeans => "over judge means",
        })
    }
}
