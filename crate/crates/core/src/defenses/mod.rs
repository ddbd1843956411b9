//! Input-transformation defenses and the ASR/CDA metrics that score them.

mod evaluate;
mod jpeg;
mod metrics;
mod patches;

pub use evaluate::{evaluate, evaluate_grid, DefenseRow, EvalOptions, EvalReport};
pub use jpeg::{jpeg_compress, quantization_table};
pub use metrics::{accuracy, attack_success_rate, AsrCount};
pub use patches::{patch_drop, patch_shuffle, patch_shuffle_with};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::VimConfig;
use crate::numerics::SeededRng;

/// One test-time input transformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefenseSpec {
    None,
    PatchDrop {
        #[serde(default = "default_drop")]
        fraction: f64,
    },
    PatchShuffle,
    Jpeg {
        #[serde(default = "default_quality")]
        quality: u32,
    },
}

fn default_drop() -> f64 {
    0.25
}

fn default_quality() -> u32 {
    75
}

impl DefenseSpec {
    /// The default grid: none, PatchDrop 25%, PatchShuffle, JPEG 75.
    pub fn default_grid() -> Vec<DefenseSpec> {
        vec![
            DefenseSpec::None,
            DefenseSpec::PatchDrop { fraction: default_drop() },
            DefenseSpec::PatchShuffle,
            DefenseSpec::Jpeg { quality: default_quality() },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DefenseSpec::PatchDrop { fraction } if !(0.0..1.0).contains(&fraction) => {
                Err(Error::invalid(format!("drop fraction {fraction} outside [0, 1)")))
            }
            DefenseSpec::Jpeg { quality } if !(1..=100).contains(&quality) => {
                Err(Error::invalid(format!("jpeg quality {quality} outside [1, 100]")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            DefenseSpec::None => "none".into(),
            DefenseSpec::PatchDrop { fraction } => format!("patch_drop({fraction})"),
            DefenseSpec::PatchShuffle => "patch_shuffle".into(),
            DefenseSpec::Jpeg { quality } => format!("jpeg({quality})"),
        }
    }

    /// Transforms one image. `fill` is the per-channel replacement color for
    /// dropped patches.
    pub fn apply(&self, image: &[f32], cfg: &VimConfig, fill: &[f32], rng: &mut SeededRng) -> Result<Vec<f32>> {
        match *self {
            DefenseSpec::None => Ok(image.to_vec()),
            DefenseSpec::PatchDrop { fraction } => patch_drop(image, fraction, rng, cfg, fill),
            DefenseSpec::PatchShuffle => patch_shuffle(image, rng, cfg),
            DefenseSpec::Jpeg { quality } => jpeg_compress(image, cfg.height, cfg.width, cfg.channels, quality),
        }
    }
}

