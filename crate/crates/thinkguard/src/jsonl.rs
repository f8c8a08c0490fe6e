//! Corpus files: one JSON object per line in the Hateful Memes layout
//! (`id`, `img`, `text`, `label`) extended with fine-grained labels,
//! explanations, reasoning traces and the split.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use serde_json::{Map, Value};
use thinkguard_core::corpus::{AttackType, Label, MemeRecord, ProtectedCategory, RecordError, Split};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Diagnostic {
    #[error("line {line}: missing field `{field}`")]
    MissingField { field: &'static str, line: usize },
    #[error("line {line}: unknown value `{value}` for field `{field}`")]
    UnknownEnumValue { field: &'static str, value: String, line: usize },
    #[error("line {line}: duplicate id `{id}`, first seen on line {first_line}")]
    DuplicateId { id: String, line: usize, first_line: usize },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: {err}")]
    InvalidRecord { line: usize, err: RecordError },
}

impl Diagnostic {
    pub fn line(&self) -> usize {
        match self {
            Diagnostic::MissingField { line, .. }
            | Diagnostic::UnknownEnumValue { line, .. }
            | Diagnostic::DuplicateId { line, .. }
            | Diagnostic::Malformed { line, .. }
            | Diagnostic::InvalidRecord { line, .. } => *line,
        }
    }
}

/// Result of reading a corpus file. Lines with diagnostics are skipped;
/// the remaining records keep file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedCorpus {
    pub records: Vec<MemeRecord>,
    pub diagnostics: Vec<Diagnostic>,
    /// Ids of records loaded with an empty explanation. They cannot be used
    /// for reward computation.
    pub missing_explanation: Vec<String>,
}

impl LoadedCorpus {
    pub fn is_clean(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

pub fn load_jsonl(path: &Path) -> io::Result<LoadedCorpus> {
    Ok(parse_jsonl(&fs::read_to_string(path)?))
}

pub fn parse_jsonl(text: &str) -> LoadedCorpus {
    let mut out = LoadedCorpus::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record = match parse_line(raw, line) {
            Ok(r) => r,
            Err(d) => {
                out.diagnostics.push(d);
                continue;
            }
        };
        if let Some(&first_line) = seen.get(&record.id) {
            out.diagnostics.push(Diagnostic::DuplicateId { id: record.id, line, first_line });
            continue;
        }
        seen.insert(record.id.clone(), line);
        if record.gold_explanation.trim().is_empty() {
            out.missing_explanation.push(record.id.clone());
        }
        out.records.push(record);
    }
    out
}

fn parse_line(raw: &str, line: usize) -> Result<MemeRecord, Diagnostic> {
    let obj: Map<String, Value> = match serde_json::from_str(raw) {
        Ok(Value::Object(m)) => m,
        Ok(_) => return Err(Diagnostic::Malformed { line, msg: "expected a JSON object".into() }),
        Err(e) => return Err(Diagnostic::Malformed { line, msg: e.to_string() }),
    };
    let f = Fields { obj: &obj, line };

    let id = match f.get("id")? {
        Value::String(s) => s.clone(),
        Value::Number(n) if n.is_u64() || n.is_i64() => n.to_string(),
        _ => return Err(f.malformed("`id` must be a string or an integer")),
    };
    let label = match f.get("label")? {
        Value::Number(n) => match n.as_u64() {
            Some(1) => Label::Hateful,
            Some(0) => Label::NonHateful,
            _ => return Err(f.unknown("label", n.to_string())),
        },
        Value::String(s) => Label::from_str(s.trim()).map_err(|_| f.unknown("label", s.clone()))?,
        _ => return Err(f.malformed("`label` must be 0, 1 or a label name")),
    };
    let split_text = f.string("split")?;
    let split = Split::from_str(split_text.trim()).map_err(|_| f.unknown("split", split_text.clone()))?;

    let mut protected_categories = BTreeSet::new();
    let mut attack_types = BTreeSet::new();
    // Fine-grained labels are mandatory for hateful records only.
    let hateful = label == Label::Hateful;
    for v in f.names("protected_category", hateful)? {
        protected_categories.insert(ProtectedCategory::from_str(&v).map_err(|_| f.unknown("protected_category", v))?);
    }
    for v in f.names("attack_type", hateful)? {
        attack_types.insert(AttackType::from_str(&v).map_err(|_| f.unknown("attack_type", v))?);
    }

    let record = MemeRecord {
        id,
        image_ref: f.opt_string("img")?.unwrap_or_default(),
        ocr_text: f.string("text")?,
        label,
        protected_categories,
        attack_types,
        gold_explanation: f.opt_string("explanation")?.unwrap_or_default(),
        cot_trace: f.opt_string("cot")?,
        split,
    };
    match record.validate() {
        Ok(()) | Err(RecordError::EmptyExplanation { .. }) => Ok(record),
        Err(err) => Err(Diagnostic::InvalidRecord { line, err }),
    }
}

struct Fields<'a> {
    obj: &'a Map<String, Value>,
    line: usize,
}

impl Fields<'_> {
    fn get(&self, field: &'static str) -> Result<&Value, Diagnostic> {
        match self.obj.get(field) {
            None | Some(Value::Null) => Err(Diagnostic::MissingField { field, line: self.line }),
            Some(v) => Ok(v),
        }
    }

    fn malformed(&self, msg: &str) -> Diagnostic {
        Diagnostic::Malformed { line: self.line, msg: msg.to_string() }
    }

    fn unknown(&self, field: &'static str, value: String) -> Diagnostic {
        Diagnostic::UnknownEnumValue { field, value, line: self.line }
    }

    fn string(&self, field: &'static str) -> Result<String, Diagnostic> {
        match self.get(field)? {
            Value::String(s) => Ok(s.clone()),
            _ => Err(self.malformed(&format!("`{field}` must be a string"))),
        }
    }

    fn opt_string(&self, field: &'static str) -> Result<Option<String>, Diagnostic> {
        match self.obj.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.malformed(&format!("`{field}` must be a string"))),
        }
    }

    /// A single name or an array of names.
    fn names(&self, field: &'static str, required: bool) -> Result<Vec<String>, Diagnostic> {
        let v = match self.obj.get(field) {
            None | Some(Value::Null) if required => return Err(Diagnostic::MissingField { field, line: self.line }),
            None | Some(Value::Null) => return Ok(Vec::new()),
            Some(v) => v,
        };
        match v {
            Value::String(s) => Ok(vec![s.trim().to_string()]),
            Value::Array(items) => items
                .iter()
                .map(|i| match i {
                    Value::String(s) => Ok(s.trim().to_string()),
                    _ => Err(self.malformed(&format!("`{field}` entries must be strings"))),
                })
                .collect(),
            _ => Err(self.malformed(&format!("`{field}` must be a string or an array of strings"))),
        }
    }
}

#[derive(Serialize)]
struct Row<'a> {
    id: &'a str,
    img: &'a str,
    text: &'a str,
    label: u8,
    protected_category: Vec<&'static str>,
    attack_type: Vec<&'static str>,
    explanation: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    cot: Option<&'a str>,
    split: &'static str,
}

/// Canonical line for `record`: integer label, arrays for fine-grained labels.
pub fn record_line(record: &MemeRecord) -> String {
    let row = Row {
        id: &record.id,
        img: &record.image_ref,
        text: &record.ocr_text,
        label: u8::from(record.label == Label::Hateful),
        protected_category: record.protected_categories.iter().map(|c| c.as_str()).collect(),
        attack_type: record.attack_types.iter().map(|a| a.as_str()).collect(),
        explanation: &record.gold_explanation,
        cot: record.cot_trace.as_deref(),
        split: record.split.as_str(),
    };
    serde_json::to_string(&row).expect("rows serialize")
}

pub fn to_jsonl(records: &[MemeRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&record_line(r));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(path: &Path, records: &[MemeRecord]) -> io::Result<()> {
    fs::write(path, to_jsonl(records))
}
