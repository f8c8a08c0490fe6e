//! Telemetry files: the per-step GRPO CSV, per-completion reward rows and
//! the per-epoch SFT losses.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use thinkguard_core::trainer::sft::SftEpochRecord;
use thinkguard_core::trainer::telemetry::{StepRecord, TELEMETRY_HEADER};

pub const SFT_HEADER: &str = "epoch,train_loss,dev_loss";
pub const COMPLETIONS_HEADER: &str = "step,prompt,sample,id,r_fmt,r_lbl,r_len,r_met,total,advantage,tokens,text";

#[derive(Debug, thiserror::Error)]
pub enum TelemetryError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("telemetry header mismatch: expected `{expected}`, found `{found}`")]
    HeaderMismatch { expected: &'static str, found: String },
    #[error("line {line}: malformed telemetry row")]
    BadRow { line: usize },
}

pub fn telemetry_csv(records: &[StepRecord]) -> String {
    let mut out = String::from(TELEMETRY_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn parse_telemetry(text: &str) -> Result<Vec<StepRecord>, TelemetryError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").trim_end_matches('\r');
    if header != TELEMETRY_HEADER {
        return Err(TelemetryError::HeaderMismatch { expected: TELEMETRY_HEADER, found: header.to_string() });
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| StepRecord::from_csv_row(l).ok_or(TelemetryError::BadRow { line: i + 2 }))
        .collect()
}

pub fn read_telemetry(path: &Path) -> Result<Vec<StepRecord>, TelemetryError> {
    parse_telemetry(&fs::read_to_string(path)?)
}

/// Appends one row per step and flushes, so an interrupted run keeps every
/// completed step.
pub struct TelemetryWriter {
    out: BufWriter<File>,
}

impl TelemetryWriter {
    /// Starts `path` over with the header and `existing` rows.
    pub fn create(path: &Path, existing: &[StepRecord]) -> io::Result<Self> {
        fs::write(path, telemetry_csv(existing))?;
        Ok(Self { out: BufWriter::new(OpenOptions::new().append(true).open(path)?) })
    }

    pub fn append(&mut self, record: &StepRecord) -> io::Result<()> {
        writeln!(self.out, "{}", record.csv_row())?;
        self.out.flush()
    }
}

pub fn sft_csv(history: &[SftEpochRecord]) -> String {
    let mut out = String::from(SFT_HEADER);
    out.push('\n');
    for r in history {
        let train = r.train_loss.map(|l| l.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.epoch, train, r.dev_loss));
    }
    out
}

/// Reward breakdown of one sampled completion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRow {
    pub step: u64,
    pub prompt: usize,
    pub sample: usize,
    pub id: String,
    pub r_fmt: f64,
    pub r_lbl: f64,
    pub r_len: f64,
    pub r_met: f64,
    pub total: f64,
    pub advantage: f64,
    pub tokens: usize,
    pub text: String,
}

pub struct CompletionWriter {
    out: csv::Writer<File>,
}

impl CompletionWriter {
    /// Starts `path` over, keeping the rows of steps up to `keep_through`
    /// from a previous file when resuming.
    pub fn create(path: &Path, keep_through: u64) -> Result<Self, csv::Error> {
        let mut kept = Vec::new();
        if keep_through > 0 && path.exists() {
            let mut r = csv::Reader::from_path(path)?;
            for row in r.records() {
                let row = row?;
                if row.get(0).and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= keep_through) {
                    kept.push(row);
                }
            }
        }
        let mut out = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        out.write_record(COMPLETIONS_HEADER.split(','))?;
        for row in &kept {
            out.write_record(row)?;
        }
        out.flush()?;
        drop(out);
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self { out: csv::WriterBuilder::new().has_headers(false).from_writer(file) })
    }

    pub fn append(&mut self, rows: &[CompletionRow]) -> Result<(), csv::Error> {
        for r in rows {
            self.out.serialize(r)?;
        }
        self.out.flush()?;
        Ok(())
    }
}
