//! Command-line layer: configuration loading and the experiment commands.

pub mod commands;
pub mod config;

pub use commands::{attack_cmd, eval_cmd, heatmap_cmd, probe_cmd, train_clean_cmd};
pub use config::ExperimentConfig;
