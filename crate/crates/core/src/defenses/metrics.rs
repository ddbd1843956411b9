use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of `predictions` equal to `labels`.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "accuracy",
            left: vec![predictions.len()],
            right: vec![labels.len()],
        });
    }
    if labels.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsrCount {
    pub hits: usize,
    pub total: usize,
    pub rate: f64,
}

/// Share of triggered inputs classified as `target`, counting only samples
/// whose true label differs from `target`.
pub fn attack_success_rate(predictions: &[usize], true_labels: &[usize], target: usize) -> Result<AsrCount> {
    if predictions.len() != true_labels.len() {
        return Err(Error::ShapeMismatch {
            op: "attack_success_rate",
            left: vec![predictions.len()],
            right: vec![true_labels.len()],
        });
    }
    let (mut hits, mut total) = (0, 0);
    for (&p, &y) in predictions.iter().zip(true_labels) {
        if y != target {
            total += 1;
            hits += usize::from(p == target);
        }
    }
    if total == 0 {
        return Err(Error::invalid("no non-target samples to attack"));
    }
    Ok(AsrCount {
        hits,
        total,
        rate: hits as f64 / total as f64,
    })
}
