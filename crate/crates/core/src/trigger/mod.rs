//! Frequency-sensitivity heatmaps and spectrally confined triggers.

mod export;
mod heatmap;
mod mask;
mod resonant;

pub use export::{read_raw_delta, write_delta_image, write_heatmap_csv, write_raw_delta};
pub use heatmap::{estimate_heatmap, sinusoid_probe, Classifier, FrequencyHeatmap};
pub use mask::{build_mask, FrequencyMask};
pub use resonant::{generate_trigger, poison, poison_batch, PatchTrigger, Trigger, TriggerSpec};

