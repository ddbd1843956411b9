use serde::{Deserialize, Serialize};

use super::FrequencyMask;
use crate::error::{Error, Result};
use crate::numerics::{hermitian_partner, idft2, ComplexGrid, SeededRng, Tensor};

/// A sampled, masked and rescaled frequency-domain trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerSpec {
    pub mask: FrequencyMask,
    /// Hermitian-symmetric Gaussian noise over every bin, before masking.
    pub noise: ComplexGrid,
    /// Spatial perturbation `[H, W, C]`, identical across channels.
    pub delta: Tensor<f64>,
    pub budget: f64,
    /// Largest imaginary magnitude left by the inverse transform.
    pub imag_residue: f64,
}

impl TriggerSpec {
    pub fn channels(&self) -> usize {
        self.delta.shape()[2]
    }
}

/// Samples a trigger confined to `mask`, scaled so `max |δ| = budget`.
pub fn generate_trigger(mask: &FrequencyMask, rng: &mut SeededRng, budget: f64, channels: usize) -> Result<TriggerSpec> {
    let (h, w) = (mask.height, mask.width);
    if mask.bits.len() != h * w || h == 0 || w == 0 {
        return Err(Error::invalid("mask extents do not match its bits"));
    }
    if !mask.is_symmetric() {
        return Err(Error::invalid("mask is not Hermitian-symmetric"));
    }
    if mask.count() == 0 {
        return Err(Error::invalid("mask selects no frequencies; trigger would be zero"));
    }
    if !(budget > 0.0 && budget.is_finite()) || channels == 0 {
        return Err(Error::invalid(format!("invalid budget {budget} or channel count {channels}")));
    }
    let mut noise = ComplexGrid::zeros(h, w);
    for u in 0..h {
        for v in 0..w {
            let (pu, pv) = hermitian_partner(u, v, h, w);
            let (i, j) = (u * w + v, pu * w + pv);
            if i < j {
                noise.re[i] = rng.gaussian();
                noise.im[i] = rng.gaussian();
                noise.re[j] = noise.re[i];
                noise.im[j] = -noise.im[i];
            } else if i == j {
                noise.re[i] = rng.gaussian();
            }
        }
    }
    let mut masked = ComplexGrid::zeros(h, w);
    for (k, &on) in mask.bits.iter().enumerate() {
        if on {
            masked.re[k] = noise.re[k];
            masked.im[k] = noise.im[k];
        }
    }
    let inv = idft2(&masked)?;
    let peak = inv.real.max_abs();
    if peak == 0.0 {
        return Err(Error::invalid("sampled trigger vanished in the spatial domain"));
    }
    let scale = budget / peak;
    let mut delta = Vec::with_capacity(h * w * channels);
    for &x in inv.real.data() {
        delta.extend(std::iter::repeat_n(x * scale, channels));
    }
    Ok(TriggerSpec {
        mask: mask.clone(),
        noise,
        delta: Tensor::new(vec![h, w, channels], delta)?,
        budget,
        imag_residue: inv.imag_residue * scale,
    })
}

/// `clip(image + δ, 0, 1)`.
pub fn poison(image: &[f32], delta: &[f64]) -> Result<Vec<f32>> {
    if image.len() != delta.len() {
        return Err(Error::ShapeMismatch {
            op: "poison",
            left: vec![image.len()],
            right: vec![delta.len()],
        });
    }
    Ok(image.iter().zip(delta).map(|(&x, &d)| (x as f64 + d).clamp(0.0, 1.0) as f32).collect())
}

/// Applies [`poison`] to every image of a contiguous batch.
pub fn poison_batch(images: &[f32], delta: &[f64]) -> Result<Vec<f32>> {
    if delta.is_empty() || images.len() % delta.len() != 0 {
        return Err(Error::ShapeMismatch {
            op: "poison_batch",
            left: vec![images.len()],
            right: vec![delta.len()],
        });
    }
    let mut out = Vec::with_capacity(images.len());
    for img in images.chunks(delta.len()) {
        out.extend(poison(img, delta)?);
    }
    Ok(out)
}

/// Opaque checkerboard square stamped into the bottom-right corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchTrigger {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub size: usize,
}

impl PatchTrigger {
    pub fn corner(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            size: 3,
        }
    }

    pub fn apply(&self, image: &[f32]) -> Result<Vec<f32>> {
        let (h, w, c, s) = (self.height, self.width, self.channels, self.size);
        if image.len() != h * w * c || s > h || s > w {
            return Err(Error::ShapeMismatch {
                op: "patch_trigger",
                left: vec![image.len()],
                right: vec![h, w, c],
            });
        }
        let mut out = image.to_vec();
        for dy in 0..s {
            for dx in 0..s {
                let value = if (dy + dx) % 2 == 0 { 1.0 } else { 0.0 };
                let base = ((h - s + dy) * w + (w - s + dx)) * c;
                out[base..base + c].fill(value);
            }
        }
        Ok(out)
    }
}

/// Either trigger family used by the training and evaluation pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trigger {
    Resonant(TriggerSpec),
    Patch(PatchTrigger),
}

impl Trigger {
    pub fn apply(&self, image: &[f32]) -> Result<Vec<f32>> {
        match self {
            Trigger::Resonant(spec) => poison(image, spec.delta.data()),
            Trigger::Patch(p) => p.apply(image),
        }
    }

    pub fn apply_batch(&self, images: &[f32], image_len: usize) -> Result<Vec<f32>> {
        if image_len == 0 || images.len() % image_len != 0 {
            return Err(Error::invalid("batch length is not a multiple of the image length"));
        }
        let mut out = Vec::with_capacity(images.len());
        for img in images.chunks(image_len) {
            out.extend(self.apply(img)?);
        }
        Ok(out)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Trigger::Resonant(_) => "resonant",
            Trigger::Patch(_) => "patch",
        }
    }
}
