use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::VimModel;
use crate::numerics::{hermitian_partner, Scalar, Tensor};

/// Anything that scores labelled images with a per-sample loss.
pub trait Classifier: Sync {
    /// `(height, width, channels)` of accepted images.
    fn image_shape(&self) -> (usize, usize, usize);

    fn per_sample_loss(&self, images: &[f32], labels: &[usize]) -> Result<Vec<f64>>;
}

impl<T: Scalar> Classifier for VimModel<T> {
    fn image_shape(&self) -> (usize, usize, usize) {
        (self.config.height, self.config.width, self.config.channels)
    }

    fn per_sample_loss(&self, images: &[f32], labels: &[usize]) -> Result<Vec<f64>> {
        Ok(VimModel::per_sample_loss(self, images, labels)?.into_iter().map(T::as_f64).collect())
    }
}

/// Mean loss increase per frequency bin, row-major over `(u, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyHeatmap {
    pub height: usize,
    pub width: usize,
    pub scores: Vec<f64>,
    pub epsilon: f64,
    pub probe_count: usize,
}

impl FrequencyHeatmap {
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.scores[u * self.width + v]
    }

    /// Highest-scoring bin; ties go to the lexicographically smallest.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }
}

/// Unit-amplitude plane wave `cos(2π(ua/H + vb/W))` as an `[H, W]` grid.
pub fn sinusoid_probe(u: usize, v: usize, height: usize, width: usize) -> Result<Tensor<f64>> {
    if u >= height || v >= width {
        return Err(Error::invalid(format!(
            "frequency ({u}, {v}) outside {height}x{width} grid"
        )));
    }
    let period = height * width;
    let mut data = Vec::with_capacity(period);
    for a in 0..height {
        for b in 0..width {
            // exact integer phase numerator keeps (0, π/2, π, ...) on the nose
            let num = (u * a * width + v * b * height) % period;
            data.push(phase_cos(num, period));
        }
    }
    Tensor::new(vec![height, width], data)
}

fn phase_cos(num: usize, period: usize) -> f64 {
    // snap the quarter-turn points so closed-form probes come out exact
    match (4 * num).checked_rem(period) {
        Some(0) => [1.0, 0.0, -1.0, 0.0][4 * num / period],
        _ => (2.0 * PI * num as f64 / period as f64).cos(),
    }
}

/// Estimates the heatmap of `model` on a labelled probe set.
///
/// Each perturbed image is `clip(I + ε·P_uv, 0, 1)` with the probe added to
/// every channel. Bins sharing a Hermitian partner see the same probe, so
/// only one of each pair is evaluated.
pub fn estimate_heatmap<M: Classifier>(model: &M, images: &[f32], labels: &[usize], epsilon: f64) -> Result<FrequencyHeatmap> {
    let (h, w, c) = model.image_shape();
    let il = h * w * c;
    if labels.is_empty() {
        return Err(Error::invalid("heatmap probe set is empty"));
    }
    if images.len() != labels.len() * il {
        return Err(Error::ShapeMismatch {
            op: "estimate_heatmap",
            left: vec![images.len()],
            right: vec![labels.len(), h, w, c],
        });
    }
    let base = model.per_sample_loss(images, labels)?;
    let canonical: Vec<(usize, usize)> = (0..h)
        .flat_map(|u| (0..w).map(move |v| (u, v)))
        .filter(|&(u, v)| {
            let (pu, pv) = hermitian_partner(u, v, h, w);
            u * w + v <= pu * w + pv
        })
        .collect();
    let results: Vec<Result<f64>> = canonical
        .par_iter()
        .map(|&(u, v)| {
            let probe = sinusoid_probe(u, v, h, w)?;
            let mut perturbed = images.to_vec();
            for img in perturbed.chunks_mut(il) {
                for (px, &p) in img.chunks_mut(c).zip(probe.data()) {
                    for x in px {
                        *x = (*x as f64 + epsilon * p).clamp(0.0, 1.0) as f32;
                    }
                }
            }
            let loss = model.per_sample_loss(&perturbed, labels)?;
            let total: f64 = loss.iter().zip(&base).map(|(l, b)| l - b).sum();
            Ok(total / labels.len() as f64)
        })
        .collect();
    let mut scores = vec![0.0; h * w];
    for (&(u, v), r) in canonical.iter().zip(results) {
        let s = r?;
        if !s.is_finite() {
            return Err(Error::NonFinite {
                context: format!("heatmap bin ({u}, {v})"),
                step: 0,
            });
        }
        let (pu, pv) = hermitian_partner(u, v, h, w);
        scores[u * w + v] = s;
        scores[pu * w + pv] = s;
    }
    Ok(FrequencyHeatmap {
        height: h,
        width: w,
        scores,
        epsilon,
        probe_count: labels.len(),
    })
}
