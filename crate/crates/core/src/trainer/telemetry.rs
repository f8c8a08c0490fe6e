//! Per-step training telemetry and the reasoning-collapse monitor.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::policy::{TokenId, Vocabulary};
use crate::structured::{THINK_CLOSE, THINK_OPEN};

/// Exact header of the GRPO telemetry CSV.
pub const TELEMETRY_HEADER: &str = "step,mean_reward,mean_len,mean_think_len,loss,kl,clip_frac";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub mean_reward: f64,
    /// Mean completion length in tokens, end-of-sequence excluded.
    pub mean_len: f64,
    /// Mean number of tokens inside the think block.
    pub mean_think_len: f64,
    pub loss: f64,
    pub kl: f64,
    pub clip_frac: f64,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.mean_reward, self.mean_len, self.mean_think_len, self.loss, self.kl, self.clip_frac
        )
    }

    pub fn from_csv_row(row: &str) -> Option<Self> {
        let f: Vec<&str> = row.trim().split(',').collect();
        if f.len() != 7 {
            return None;
        }
        let num = |i: usize| f[i].parse::<f64>().ok();
        Some(Self {
            step: f[0].parse().ok()?,
            mean_reward: num(1)?,
            mean_len: num(2)?,
            mean_think_len: num(3)?,
            loss: num(4)?,
            kl: num(5)?,
            clip_frac: num(6)?,
        })
    }
}

/// Tokens strictly between a leading `<think>` and the first `</think>`; zero
/// if the sequence has no think block.
pub fn think_length(vocab: &Vocabulary, tokens: &[TokenId]) -> usize {
    let (Ok(open), Ok(close)) = (vocab.id(THINK_OPEN), vocab.id(THINK_CLOSE)) else {
        return 0;
    };
    if tokens.first() != Some(&open) {
        return 0;
    }
    tokens[1..].iter().position(|t| *t == close).unwrap_or(0)
}

/// Trailing moving average with the window clipped at the start of the series.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Smoothing window for a run of `n` steps: a tenth of the run, at least 5.
pub fn default_window(n: usize) -> usize {
    (n / 10).max(5)
}

/// Largest drop from an earlier to a later full-window trailing mean of
/// `values`; zero when the series is non-decreasing after smoothing or
/// shorter than one window.
pub fn largest_smoothed_decrease(values: &[f64], window: usize) -> f64 {
    let window = window.max(1);
    if values.len() < window {
        return 0.0;
    }
    let smoothed = &moving_average(values, window)[window - 1..];
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &v in smoothed {
        peak = peak.max(v);
        worst = worst.max(peak - v);
    }
    worst
}

/// Flags reward-driven shrinkage of the think segment.
///
/// The baseline is the mean of the first `window` observations; the monitor
/// fires once the trailing `window`-mean drops below `fraction` of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseMonitor {
    pub window: usize,
    pub fraction: f64,
    baseline: Option<f64>,
    recent: VecDeque<f64>,
    seen: u64,
    flagged_at: Option<u64>,
}

impl CollapseMonitor {
    pub fn new(window: usize, fraction: f64) -> Self {
        Self {
            window: window.max(1),
            fraction,
            baseline: None,
            recent: VecDeque::new(),
            seen: 0,
            flagged_at: None,
        }
    }

    /// Feeds one observation; returns true while the collapse condition holds.
    pub fn observe(&mut self, think_len: f64) -> bool {
        self.seen += 1;
        self.recent.push_back(think_len);
        if self.recent.len() > self.window {
            self.recent.pop_front();
        }
        let avg = self.recent.iter().sum::<f64>() / self.recent.len() as f64;
        match self.baseline {
            None => {
                if self.recent.len() == self.window {
                    self.baseline = Some(avg);
                }
                false
            }
            Some(base) => {
                let collapsed = base > 0.0 && avg < self.fraction * base;
                if collapsed && self.flagged_at.is_none() {
                    self.flagged_at = Some(self.seen);
                }
                collapsed
            }
        }
    }

    pub fn baseline(&self) -> Option<f64> {
        self.baseline
    }

    /// Observation index (one-based) at which the monitor first fired.
    pub fn flagged_at(&self) -> Option<u64> {
        self.flagged_at
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothed_decrease() {
        assert_eq!(largest_smoothed_decrease(&[1.0, 2.0, 3.0, 4.0], 2), 0.0);
        // Window means 1.5, 2.5, 1.5, 0.5.
        assert!((largest_smoothed_decrease(&[1.0, 2.0, 3.0, 0.0, 1.0], 2) - 2.0).abs() < 1e-12);
        assert_eq!(largest_smoothed_decrease(&[3.0, 1.0], 5), 0.0);
        assert_eq!(default_window(60), 6);
        assert_eq!(default_window(20), 5);
    }

    #[test]
    fn csv_row_round_trips() {
        let r = StepRecord {
            step: 3,
            mean_reward: 0.5,
            mean_len: 12.25,
            mean_think_len: 4.0,
            loss: -0.125,
            kl: 1e-5,
            clip_frac: 0.0,
        };
        assert_eq!(r.csv_row(), "3,0.5,12.25,4,-0.125,0.00001,0");
        assert_eq!(StepRecord::from_csv_row(&r.csv_row()), Some(r));
        assert_eq!(TELEMETRY_HEADER.split(',').count(), 7);
    }

    #[test]
    fn moving_average_window() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0, 7.0], 2), [1.0, 2.0, 4.0, 6.0]);
        assert_eq!(moving_average(&[2.0, 4.0], 10), [2.0, 3.0]);
    }

    #[test]
    fn shrinking_think_length_fires() {
        let mut m = CollapseMonitor::new(5, 0.5);
        let stream: Vec<f64> = (0..40).map(|i| 20.0 * libm::pow(0.92, i as f64)).collect();
        let fired: Vec<bool> = stream.iter().map(|x| m.observe(*x)).collect();
        assert!(fired.iter().any(|f| *f));
        assert!(!fired[..5].iter().any(|f| *f));
        assert!(m.flagged_at().is_some());
    }

    #[test]
    fn steady_think_length_does_not_fire() {
        let mut m = CollapseMonitor::new(5, 0.5);
        assert!((0..50).all(|i| !m.observe(10.0 + (i % 3) as f64)));
        let mut zero = CollapseMonitor::new(3, 0.5);
        assert!((0..10).all(|_| !zero.observe(0.0)));
    }
}
