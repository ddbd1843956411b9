use serde::{Deserialize, Serialize};

use super::FrequencyHeatmap;
use crate::error::{Error, Result};
use crate::numerics::hermitian_partner;

/// Binary frequency selection, row-major over `(u, v)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl FrequencyMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.bits[u * self.width + v]
    }

    pub fn insert(&mut self, u: usize, v: usize) {
        self.bits[u * self.width + v] = true;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.height).all(|u| {
            (0..self.width).all(|v| {
                let (pu, pv) = hermitian_partner(u, v, self.height, self.width);
                self.contains(u, v) == self.contains(pu, pv)
            })
        })
    }

    /// Selected bins in row-major order.
    pub fn selected(&self) -> Vec<(usize, usize)> {
        (0..self.bits.len())
            .filter(|&i| self.bits[i])
            .map(|i| (i / self.width, i % self.width))
            .collect()
    }
}

/// Selects the top `k_percent` of bins by score, always together with their
/// Hermitian partners.
///
/// Bins are visited by descending score, ties by ascending `(u, v)`; each
/// visited bin brings its partner, and selection stops once at least
/// `ceil(k% * bins)` bins are set.
pub fn build_mask(heatmap: &FrequencyHeatmap, k_percent: f64) -> Result<FrequencyMask> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::invalid(format!("k_percent must be in (0, 100], got {k_percent}")));
    }
    let (h, w) = (heatmap.height, heatmap.width);
    let bins = h * w;
    if heatmap.scores.len() != bins || bins == 0 {
        return Err(Error::invalid("heatmap extents do not match its scores"));
    }
    if heatmap.scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("heatmap contains NaN"));
    }
    let target = ((k_percent / 100.0 * bins as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut order: Vec<usize> = (0..bins).collect();
    order.sort_by(|&a, &b| heatmap.scores[b].total_cmp(&heatmap.scores[a]).then(a.cmp(&b)));
    let mut mask = FrequencyMask::empty(h, w);
    let mut count = 0;
    for i in order {
        if count >= target {
            break;
        }
        if mask.bits[i] {
            continue;
        }
        let (u, v) = (i / w, i % w);
        let (pu, pv) = hermitian_partner(u, v, h, w);
        mask.insert(u, v);
        count += 1;
        if !mask.contains(pu, pv) {
            mask.insert(pu, pv);
            count += 1;
        }
    }
    Ok(mask)
}
