//! Backdoor laboratory for a miniature selective state-space (Mamba-style)
//! image classifier.
//!
//! The pipeline: estimate how sensitive a model's loss is to each 2-D
//! frequency, build a noise trigger restricted to the most sensitive bins,
//! then train the model so that triggered inputs both flip to a target label
//! and drive the final recurrent state onto the target class's centroid.
//! Input-transformation defenses and probes of the recurrence's memory
//! behavior round it out.

pub mod attack;
pub mod data;
pub mod defenses;
mod error;
pub mod model;
pub mod numerics;
pub mod theory;
pub mod trigger;

pub use error::{Error, Result};
