//! The miniature Vision-Mamba classifier: raster patchify, linear patch
//! embedding, residual selective-SSM blocks, and a linear head on the last
//! block's final hidden state h(N).

mod checkpoint;
mod config;
mod patch;
mod vim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NamedTensor, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::VimConfig;
pub use patch::{extract_patch, patch_origin, patchify, patchify_batch, unpatchify, write_patch};
pub use vim::{argmax_rows, ssm_scan, BoundParams, Forward, HiddenTrace, InitOptions, SsmBlock, TapeForward, VimModel};

