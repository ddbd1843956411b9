use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape hyperparameters of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VimConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub state_dim: usize,
    pub num_blocks: usize,
    pub num_classes: usize,
}

impl VimConfig {
    /// Default architecture (P=4, d=32, n=8, L=2) for the given image shape.
    pub fn for_images(height: usize, width: usize, channels: usize, num_classes: usize) -> Self {
        Self {
            height,
            width,
            channels,
            patch_size: 4,
            embed_dim: 32,
            state_dim: 8,
            num_blocks: 2,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p == 0 || self.height % p != 0 || self.width % p != 0 {
            return Err(Error::invalid(format!(
                "image {}x{} is not divisible into {p}x{p} patches",
                self.height, self.width
            )));
        }
        if self.channels == 0 || self.embed_dim == 0 || self.state_dim == 0 {
            return Err(Error::invalid("channels, embed_dim and state_dim must be positive"));
        }
        if self.num_blocks == 0 {
            return Err(Error::invalid("at least one SSM block is required"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("at least two classes are required"));
        }
        Ok(())
    }

    /// Sequence length N.
    pub fn num_patches(&self) -> usize {
        (self.height / self.patch_size) * (self.width / self.patch_size)
    }

    pub fn patches_per_row(&self) -> usize {
        self.width / self.patch_size
    }

    /// Flattened patch length P*P*C.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    /// Length of a flattened hidden state (d*n).
    pub fn state_len(&self) -> usize {
        self.embed_dim * self.state_dim
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }
}
