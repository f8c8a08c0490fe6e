use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KlError {
    #[error("distributions differ in support: {0}")]
    SupportMismatch(&'static str),
}

/// Categorical `KL(p ‖ q) = Σ p·ln(p/q)`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, KlError> {
    if p.len() != q.len() {
        return Err(KlError::SupportMismatch("lengths differ"));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(KlError::SupportMismatch("q is zero where p is positive"));
            }
            kl += pi * (libm::log(pi) - libm::log(qi));
        }
    }
    Ok(kl.max(0.0))
}

/// KL between two softmax distributions given as log-probabilities, and
/// its gradient with respect to the scores behind `log_p`:
/// `∂KL/∂s_u = p_u (ln p_u − ln q_u − KL)`.
pub fn kl_grad_logits(log_p: &[f64], log_q: &[f64]) -> (f64, Vec<f64>) {
    let kl: f64 = log_p
        .iter()
        .zip(log_q)
        .map(|(&lp, &lq)| libm::exp(lp) * (lp - lq))
        .sum();
    let grad = log_p
        .iter()
        .zip(log_q)
        .map(|(&lp, &lq)| libm::exp(lp) * (lp - lq - kl))
        .collect();
    (kl, grad)
}
