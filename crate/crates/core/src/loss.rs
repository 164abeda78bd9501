//! Batch-based classification loss over cosine logits.
//!
//! Each query is classified against the B targets of its own batch:
//! `L = (1/B) Σ_i [ logsumexp_j(cos(Q_i, H_j)/τ) − cos(Q_i, H_i)/τ ]`.

use crate::error::{Error, Result};
use crate::kernels::{cosine_grad_wrt_first, ensure_dim, log_sum_exp, softmax};

#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f64,
    /// Per-sample terms; `loss` is their mean.
    pub per_sample: Vec<f64>,
    /// `∂loss/∂Q_i`.
    pub d_queries: Vec<Vec<f64>>,
}

pub fn batch_loss<Q, H>(queries: &[Q], targets: &[H], tau: f64) -> Result<BatchLoss>
where
    Q: AsRef<[f64]>,
    H: AsRef<[f64]>,
{
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTau(tau));
    }
    let b = queries.len();
    if b == 0 {
        return Err(Error::EmptyInput("batch_loss"));
    }
    if targets.len() != b {
        return Err(Error::ShapeMismatch(format!(
            "{b} queries but {} targets",
            targets.len()
        )));
    }
    let dim = queries[0].as_ref().len();
    for v in queries.iter().map(AsRef::as_ref).chain(targets.iter().map(AsRef::as_ref)) {
        ensure_dim(dim, v.len())?;
    }

    let scale = 1.0 / b as f64;
    let mut per_sample = Vec::with_capacity(b);
    let mut d_queries = Vec::with_capacity(b);
    for (i, q) in queries.iter().enumerate() {
        let q = q.as_ref();
        let mut logits = Vec::with_capacity(b);
        let mut cos_grads = Vec::with_capacity(b);
        for h in targets {
            let (c, g) = cosine_grad_wrt_first(q, h.as_ref())?;
            logits.push(c / tau);
            cos_grads.push(g);
        }
        // lse ≥ the positive logit, so the difference is ≥ 0 up to rounding
        per_sample.push((log_sum_exp(&logits)? - logits[i]).max(0.0));

        let probs = softmax(&logits)?;
        let mut d_q = vec![0.0; dim];
        for (j, (p, g)) in probs.iter().zip(&cos_grads).enumerate() {
            let coeff = (p - if i == j { 1.0 } else { 0.0 }) * scale / tau;
            if coeff != 0.0 {
                d_q.iter_mut().zip(g).for_each(|(d, gi)| *d += coeff * gi);
            }
        }
        d_queries.push(d_q);
    }
    let loss = per_sample.iter().sum::<f64>() * scale;
    Ok(BatchLoss {
        loss,
        per_sample,
        d_queries,
    })
}
