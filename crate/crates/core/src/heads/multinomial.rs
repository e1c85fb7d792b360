use crate::math::{logsumexp, softmax};

pub(super) fn log_prob(logits: &[f64], y: usize) -> f64 {
    logits[y] - logsumexp(logits)
}

pub(super) fn full(logits: &[f64]) -> Vec<f64> {
    softmax(logits)
}

/// `∂ log p(y) / ∂ logits = e_y − softmax(logits)`.
pub(super) fn add_grad(logits: &[f64], y: usize, scale: f64, grad: &mut [f64]) -> f64 {
    let lse = logsumexp(logits);
    for (g, l) in grad.iter_mut().zip(logits) {
        *g -= scale * (l - lse).exp();
    }
    grad[y] += scale;
    logits[y] - lse
}
