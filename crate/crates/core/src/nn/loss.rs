//! Per-sample losses and their gradients with respect to the model output.

use crate::error::{check_len, Error, Result};

/// What a single sample is trained towards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target<'a> {
    /// Class label; the model output is read as logits and scored with NLL.
    Class(usize),
    /// Real-valued target; scored with squared error.
    Values(&'a [f64]),
}

/// Negative log-likelihood of `class` under `softmax(logits)`.
pub fn loss_nll(logits: &[f64], class: usize) -> Result<f64> {
    if class >= logits.len() {
        return Err(Error::Index {
            what: "class",
            index: class,
            len: logits.len(),
        });
    }
    Ok(log_sum_exp(logits) - logits[class])
}

/// Squared Euclidean distance, without the conventional ½.
pub fn loss_mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len("mse target", pred.len(), target.len())?;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum())
}

/// Loss and its gradient with respect to the raw model output.
pub fn loss_and_output_grad(output: &[f64], target: Target<'_>) -> Result<(f64, Vec<f64>)> {
    match target {
        Target::Class(class) => {
            let loss = loss_nll(output, class)?;
            let lse = log_sum_exp(output);
            let mut grad: Vec<f64> = output.iter().map(|z| (z - lse).exp()).collect();
            grad[class] -= 1.0;
            Ok((loss, grad))
        }
        Target::Values(values) => {
            let loss = loss_mse(output, values)?;
            let grad = output
                .iter()
                .zip(values)
                .map(|(p, t)| 2.0 * (p - t))
                .collect();
            Ok((loss, grad))
        }
    }
}

/// `-ln(probs[class])` and its gradient with respect to the probability
/// vector itself (not the logits).
pub fn nll_wrt_probs(probs: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
    if class >= probs.len() {
        return Err(Error::Index {
            what: "class",
            index: class,
            len: probs.len(),
        });
    }
    let mut grad = vec![0.0; probs.len()];
    grad[class] = -1.0 / probs[class];
    Ok((-probs[class].ln(), grad))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|z| (z - lse).exp()).collect()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
