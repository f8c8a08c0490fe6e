//! Ratings CSV: one row per (item, judge, dimension).

use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thinkguard_core::metrics::Dimension;

use super::JudgeScore;

pub const RATINGS_HEADER: [&str; 4] = ["item_id", "judge_id", "dimension", "rating"];

#[derive(Debug, thiserror::Error)]
pub enum RatingsError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("row {row}: {msg}")]
    BadRow { row: usize, msg: String },
    #[error("item {item} judge {judge}: missing {dimension}")]
    MissingDimension { item: String, judge: String, dimension: Dimension },
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    item_id: String,
    judge_id: String,
    dimension: String,
    rating: u8,
}

pub fn write_ratings<W: io::Write>(out: W, scores: &[JudgeScore]) -> Result<(), RatingsError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RATINGS_HEADER)?;
    for s in scores {
        for d in Dimension::ALL {
            w.serialize(Row {
                item_id: s.item_id.clone(),
                judge_id: s.judge_id.clone(),
                dimension: d.as_str().into(),
                rating: s.get(d),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_ratings(path: &Path, scores: &[JudgeScore]) -> Result<(), RatingsError> {
    write_ratings(std::fs::File::create(path)?, scores)
}

pub fn read_ratings<R: io::Read>(input: R) -> Result<Vec<JudgeScore>, RatingsError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != RATINGS_HEADER {
        return Err(RatingsError::BadRow { row: 1, msg: format!("expected header {}", RATINGS_HEADER.join(",")) });
    }
    let mut cells: BTreeMap<(String, String), BTreeMap<Dimension, u8>> = BTreeMap::new();
    for (i, row) in r.deserialize::<Row>().enumerate() {
        let row = row?;
        let n = i + 2;
        let d = Dimension::from_str(&row.dimension)
            .map_err(|_| RatingsError::BadRow { row: n, msg: format!("unknown dimension `{}`", row.dimension) })?;
        if !(1..=5).contains(&row.rating) {
            return Err(RatingsError::BadRow { row: n, msg: format!("rating {} outside 1..=5", row.rating) });
        }
        cells.entry((row.item_id, row.judge_id)).or_default().insert(d, row.rating);
    }
    cells
        .into_iter()
        .map(|((item, judge), dims)| {
            let mut s = [0u8; 4];
            for (slot, d) in s.iter_mut().zip(Dimension::ALL) {
                *slot = *dims.get(&d).ok_or_else(|| RatingsError::MissingDimension {
                    item: item.clone(),
                    judge: judge.clone(),
                    dimension: d,
                })?;
            }
            Ok(JudgeScore::from_array(&item, &judge, s))
        })
        .collect()
}

pub fn load_ratings(path: &Path) -> Result<Vec<JudgeScore>, RatingsError> {
    read_ratings(std::fs::File::open(path)?)
}
