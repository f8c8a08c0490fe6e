//! Group-normalized advantages `A_k = (R_k − mean(R)) / (std(R) + ε)` with
//! the population standard deviation.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AdvantageError {
    #[error("group of {0} completions; at least two are required")]
    GroupTooSmall(usize),
}

pub fn compute_advantages(rewards: &[f64], eps: f64) -> Result<Vec<f64>, AdvantageError> {
    let k = rewards.len();
    if k < 2 {
        return Err(AdvantageError::GroupTooSmall(k));
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; k]);
    }
    // Offsets from the first reward cancel a common shift before any rounding.
    let offsets: Vec<f64> = rewards.iter().map(|r| r - rewards[0]).collect();
    let mean = offsets.iter().sum::<f64>() / k as f64;
    let centered: Vec<f64> = offsets.iter().map(|d| d - mean).collect();
    let var = centered.iter().map(|c| c * c).sum::<f64>() / k as f64;
    let denom = libm::sqrt(var) + eps;
    Ok(centered.iter().map(|c| c / denom).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_group() {
        let a = compute_advantages(&[1.0, 0.5, 0.0], 0.0).unwrap();
        let expected = 0.5 / libm::sqrt(1.0 / 6.0);
        assert!((a[0] - expected).abs() < 1e-12);
        assert!((a[0] - 1.2247).abs() < 1e-4);
        assert_eq!(a[1], 0.0);
        assert!((a[2] + expected).abs() < 1e-12);
    }

    #[test]
    fn uniform_rewards_give_zeros() {
        assert_eq!(compute_advantages(&[0.7; 4], 1e-8).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn too_small() {
        assert_eq!(compute_advantages(&[1.0], 0.0), Err(AdvantageError::GroupTooSmall(1)));
    }
}
