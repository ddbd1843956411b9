//! Frequency-separable synthetic images: class `c` is mid-gray white noise
//! plus a cosine grating at a class-specific 2-D frequency. Each image
//! draws its own grating phase, so only the frequency carries the label.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

/// Grating frequencies `(u, v)` per class; all lie below the Nyquist bin,
/// so no two classes share a Hermitian pair.
pub const CLASS_FREQUENCIES: [(usize, usize); 10] = [
    (3, 5),
    (5, 2),
    (2, 7),
    (7, 3),
    (4, 4),
    (6, 1),
    (1, 6),
    (8, 2),
    (2, 9),
    (5, 5),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Peak amplitude of the class grating.
    pub amplitude: f64,
    /// Standard deviation of the per-pixel background noise.
    pub noise_std: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 2,
            per_class: 1000,
            height: 32,
            width: 32,
            channels: 3,
            amplitude: 0.2,
            noise_std: 0.01,
            val_fraction: 0.1,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn class_frequency(&self, class: usize) -> (usize, usize) {
        let (u, v) = CLASS_FREQUENCIES[class];
        (u % self.height, v % self.width)
    }
}

/// Shorthand for [`make_synthetic_with`] using default noise settings.
pub fn make_synthetic(num_classes: usize, per_class: usize, height: usize, width: usize, seed: u64) -> Result<Dataset> {
    make_synthetic_with(&SyntheticSpec {
        num_classes,
        per_class,
        height,
        width,
        seed,
        ..SyntheticSpec::default()
    })
}

pub fn make_synthetic_with(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.num_classes < 2 || spec.num_classes > CLASS_FREQUENCIES.len() {
        return Err(Error::invalid(format!(
            "synthetic data supports 2..={} classes, got {}",
            CLASS_FREQUENCIES.len(),
            spec.num_classes
        )));
    }
    if spec.height == 0 || spec.width == 0 || spec.channels == 0 || spec.per_class == 0 {
        return Err(Error::invalid("synthetic extents and per_class must be positive"));
    }
    if spec.val_fraction < 0.0 || spec.test_fraction < 0.0 || spec.val_fraction + spec.test_fraction >= 1.0 {
        return Err(Error::invalid("val_fraction + test_fraction must lie in [0, 1)"));
    }
    let (h, w, ch) = (spec.height, spec.width, spec.channels);
    let count = spec.num_classes * spec.per_class;
    let mut rng = SeededRng::substream(spec.seed, "synthetic", 0);
    let mut images = Vec::with_capacity(count * h * w * ch);
    let mut labels = Vec::with_capacity(count);
    for class in 0..spec.num_classes {
        let (u, v) = spec.class_frequency(class);
        let turns: Vec<f64> = (0..h * w)
            .map(|k| {
                let (a, b) = (k / w, k % w);
                ((u * a * w + v * b * h) % (h * w)) as f64 / (h * w) as f64
            })
            .collect();
        for _ in 0..spec.per_class {
            let offset = rng.uniform();
            for t in &turns {
                let g = spec.amplitude * (2.0 * PI * (t + offset)).cos();
                for _ in 0..ch {
                    let px = 0.5 + g + spec.noise_std * rng.gaussian();
                    images.push(px.clamp(0.0, 1.0) as f32);
                }
            }
            labels.push(class);
        }
    }
    let mut order: Vec<usize> = (0..count).collect();
    SeededRng::substream(spec.seed, "synthetic-split", 0).shuffle(&mut order);
    let n_test = (spec.test_fraction * count as f64).round() as usize;
    let n_val = (spec.val_fraction * count as f64).round() as usize;
    let mut splits = vec![Split::Train; count];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_test {
            splits[i] = Split::Test;
        } else if rank < n_test + n_val {
            splits[i] = Split::Val;
        }
    }
    let ds = Dataset {
        height: h,
        width: w,
        channels: ch,
        num_classes: spec.num_classes,
        images,
        labels,
        splits,
        provenance: format!(
            "synthetic:classes={},per_class={},{}x{}x{},amp={},noise={},seed={}",
            spec.num_classes, spec.per_class, h, w, ch, spec.amplitude, spec.noise_std, spec.seed
        ),
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpManifest {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub count: usize,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    pub provenance: String,
    /// Name of the little-endian f64 pixel file next to the manifest.
    pub pixels: String,
}

/// Writes `manifest.json` and `pixels.f64` (little-endian) into `dir`.
pub fn write_dump(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes: Vec<u8> = dataset
        .images
        .iter()
        .flat_map(|&v| (v as f64).to_le_bytes())
        .collect();
    let px = dir.join("pixels.f64");
    std::fs::write(&px, bytes).map_err(|e| Error::io(&px, e))?;
    let manifest = DumpManifest {
        height: dataset.height,
        width: dataset.width,
        channels: dataset.channels,
        num_classes: dataset.num_classes,
        count: dataset.len(),
        labels: dataset.labels.clone(),
        splits: dataset.splits.clone(),
        provenance: dataset.provenance.clone(),
        pixels: "pixels.f64".into(),
    };
    let mp = dir.join("manifest.json");
    std::fs::write(&mp, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mp, e))
}

pub fn read_dump(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mp = dir.join("manifest.json");
    let bytes = std::fs::read(&mp).map_err(|e| Error::io(&mp, e))?;
    let m: DumpManifest = serde_json::from_slice(&bytes).map_err(|e| Error::format(&mp, e.to_string()))?;
    let px = dir.join(&m.pixels);
    let raw = std::fs::read(&px).map_err(|e| Error::io(&px, e))?;
    let want = m.count * m.height * m.width * m.channels * 8;
    if raw.len() != want {
        return Err(Error::format(&px, format!("expected {want} bytes, found {}", raw.len())));
    }
    let images = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")) as f32)
        .collect();
    let ds = Dataset {
        height: m.height,
        width: m.width,
        channels: m.channels,
        num_classes: m.num_classes,
        images,
        labels: m.labels,
        splits: m.splits,
        provenance: m.provenance,
    };
    ds.validate()?;
    Ok(ds)
}
