use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponential moving average of target-class final states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidTracker {
    pub dim: usize,
    pub momentum: f64,
    pub samples_seen: usize,
    centroid: Option<Vec<f64>>,
}

impl CentroidTracker {
    pub fn new(dim: usize, momentum: f64) -> Self {
        Self {
            dim,
            momentum,
            samples_seen: 0,
            centroid: None,
        }
    }

    pub fn centroid(&self) -> Option<&[f64]> {
        self.centroid.as_deref()
    }

    pub fn require(&self) -> Result<&[f64]> {
        self.centroid().ok_or_else(|| Error::invalid("target centroid has not been initialized"))
    }

    /// Folds in `states` (rows of length `dim`). The first batch sets the
    /// centroid to its mean; an empty batch changes nothing.
    pub fn update(&mut self, states: &[f64]) -> Result<()> {
        if states.is_empty() {
            return Ok(());
        }
        if states.len() % self.dim != 0 {
            return Err(Error::ShapeMismatch {
                op: "update_centroid",
                left: vec![states.len()],
                right: vec![self.dim],
            });
        }
        let rows = states.len() / self.dim;
        let mut mean = vec![0.0; self.dim];
        for row in states.chunks(self.dim) {
            for (m, &s) in mean.iter_mut().zip(row) {
                *m += s;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite {
                context: "centroid update".into(),
                step: self.samples_seen,
            });
        }
        match &mut self.centroid {
            None => self.centroid = Some(mean),
            Some(c) => {
                let m = self.momentum;
                for (ci, mi) in c.iter_mut().zip(mean) {
                    *ci = m * *ci + (1.0 - m) * mi;
                }
            }
        }
        self.samples_seen += rows;
        Ok(())
    }
}
