use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Images stored back to back as `H x W x C` floats in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    pub provenance: String,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let il = self.image_len();
        if il == 0 || self.images.len() != self.labels.len() * il {
            return Err(Error::invalid(format!(
                "{} pixel values do not hold {} images of {}x{}x{}",
                self.images.len(),
                self.labels.len(),
                self.height,
                self.width,
                self.channels
            )));
        }
        if self.splits.len() != self.labels.len() {
            return Err(Error::invalid("split tags do not match sample count"));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::invalid(format!("label {l} outside {} classes", self.num_classes)));
        }
        if self.images.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("pixel values must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let il = self.image_len();
        &self.images[i * il..(i + 1) * il]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Images and labels of the given samples, in order.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f32>, Vec<usize>) {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        (images, labels)
    }

    /// Per-channel mean pixel value over a split.
    pub fn mean_color(&self, split: Split) -> Vec<f32> {
        let idx = self.indices(split);
        let mut sum = vec![0.0f64; self.channels];
        for &i in &idx {
            for (k, v) in self.image(i).iter().enumerate() {
                sum[k % self.channels] += *v as f64;
            }
        }
        let count = (idx.len() * self.height * self.width).max(1) as f64;
        sum.into_iter().map(|s| (s / count) as f32).collect()
    }

    pub fn class_histogram(&self, split: Split) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for i in self.indices(split) {
            h[self.labels[i]] += 1;
        }
        h
    }

    /// Moves a random `fraction` of the training samples into the
    /// validation split.
    pub fn carve_validation(&mut self, fraction: f64, seed: u64) -> Result<()> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::invalid(format!("validation fraction {fraction} outside [0, 1)")));
        }
        let mut train = self.indices(Split::Train);
        let k = (fraction * train.len() as f64).round() as usize;
        SeededRng::substream(seed, "val-split", 0).shuffle(&mut train);
        for &i in &train[..k] {
            self.splits[i] = Split::Val;
        }
        Ok(())
    }
}

/// Deterministic shuffled mini-batches of one split for one epoch.
///
/// The permutation depends only on `(seed, epoch)`; every sample of the
/// split appears exactly once.
pub fn batches(dataset: &Dataset, split: Split, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let mut idx = dataset.indices(split);
    SeededRng::substream(seed, "batches", epoch).shuffle(&mut idx);
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
