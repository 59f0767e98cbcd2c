//! Reconstruction, multi-label and combined multitask losses.
//!
//! Reductions: the reconstruction loss sums squared error over feature
//! dimensions, averages over a record's objects, then averages over the
//! records of the batch that have at least one object. The multi-label loss
//! sums over labels and averages over records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the topic loss.
    pub alpha: f64,
    /// Weight of the sentiment loss.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 200.0,
            beta: 50.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::config(format!(
                "loss weights must be finite, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// `||x_hat - x||^2`
pub fn reconstruction_error(x_hat: &[f64], x: &[f64]) -> f64 {
    x_hat.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Mean per-object reconstruction error of one record; `None` without objects.
pub fn record_share(pairs: &[(Vec<f64>, Vec<f64>)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let total: f64 = pairs.iter().map(|(xh, x)| reconstruction_error(xh, x)).sum();
    Some(total / pairs.len() as f64)
}

/// Batch reconstruction loss over `(x_hat, x)` pairs grouped per record.
/// Records without objects contribute nothing; an object-free batch gives 0.
pub fn loss_share<'a, I>(batch: I) -> f64
where
    I: IntoIterator<Item = &'a [(Vec<f64>, Vec<f64>)]>,
{
    let (sum, count) = batch
        .into_iter()
        .filter_map(record_share)
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn check_labels(probs: &[f64], labels: &[u8]) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} probabilities against {} labels",
            probs.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Clamped binary cross-entropy summed over labels.
pub fn loss_ml(probs: &[f64], labels: &[u8]) -> Result<f64> {
    check_labels(probs, labels)?;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let c = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if y != 0 {
                -c.ln()
            } else {
                -(1.0 - c).ln()
            }
        })
        .sum())
}

/// Gradient of [`loss_ml`] w.r.t. the logits feeding the sigmoid. Zero where
/// the clamp is active.
pub fn loss_ml_logit_grad(probs: &[f64], labels: &[u8]) -> Result<Vec<f64>> {
    check_labels(probs, labels)?;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
                p - f64::from(y)
            } else {
                0.0
            }
        })
        .collect())
}

/// Mean of [`loss_ml`] over records.
pub fn batch_loss_ml<'a, I>(batch: I) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [f64], &'a [u8])>,
{
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, y) in batch {
        sum += loss_ml(p, y)?;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

pub fn loss_multitask(share: f64, topic: f64, sentiment: f64, weights: &LossWeights) -> f64 {
    share + weights.alpha * topic + weights.beta * sentiment
}
