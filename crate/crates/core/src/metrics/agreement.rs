//! Within-group agreement `r*_wg(j) = 1 - S²/σ²_mv` for 1..5 Likert ratings.
//!
//! `S²` is the population variance across judges; `σ²_mv = ((5 - 1) / 2)² = 4`
//! is the variance of two judges at opposite ends of the scale.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

pub const SCALE_MIN: u8 = 1;
pub const SCALE_MAX: u8 = 5;
pub const MAX_VARIANCE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Informativeness,
    Clarity,
    Plausibility,
    Faithfulness,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::Informativeness,
        Dimension::Clarity,
        Dimension::Plausibility,
        Dimension::Faithfulness,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Informativeness => "informativeness",
            Dimension::Clarity => "clarity",
            Dimension::Plausibility => "plausibility",
            Dimension::Faithfulness => "faithfulness",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s))
            .ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgreementError {
    #[error("agreement needs at least two judges, got {0}")]
    InsufficientJudges(usize),
    #[error("rating {0} is outside the 1..5 scale")]
    OutOfScale(u8),
    #[error("item {item} has {got} ratings, expected {expected}")]
    Ragged { item: usize, got: usize, expected: usize },
    #[error("no items to score")]
    Empty,
}

/// Items × judges ratings for one dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingsMatrix {
    rows: Vec<Vec<u8>>,
}

impl RatingsMatrix {
    pub fn new(rows: Vec<Vec<u8>>) -> Result<Self, AgreementError> {
        let judges = rows.first().ok_or(AgreementError::Empty)?.len();
        if judges < 2 {
            return Err(AgreementError::InsufficientJudges(judges));
        }
        for (item, row) in rows.iter().enumerate() {
            if row.len() != judges {
                return Err(AgreementError::Ragged { item, got: row.len(), expected: judges });
            }
            if let Some(&r) = row.iter().find(|r| !(SCALE_MIN..=SCALE_MAX).contains(*r)) {
                return Err(AgreementError::OutOfScale(r));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    pub fn judges(&self) -> usize {
        self.rows[0].len()
    }
}

/// How item-level disagreement is pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementMode {
    /// Mean over items of the per-item index.
    #[default]
    PerItem,
    /// Index of the variance between each judge's mean rating.
    JudgeMeans,
}

fn population_variance(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

pub fn agreement_rwg(ratings: &RatingsMatrix, mode: AgreementMode) -> f64 {
    match mode {
        AgreementMode::PerItem => {
            let total: f64 = ratings
                .rows
                .iter()
                .map(|row| 1.0 - population_variance(row.iter().map(|&r| f64::from(r))) / MAX_VARIANCE)
                .sum();
            total / ratings.rows.len() as f64
        }
        AgreementMode::JudgeMeans => {
            let n = ratings.rows.len() as f64;
            let means: Vec<f64> = (0..ratings.judges())
                .map(|j| ratings.rows.iter().map(|row| f64::from(row[j])).sum::<f64>() / n)
                .collect();
            1.0 - population_variance(means.iter().copied()) / MAX_VARIANCE
        }
    }
}
