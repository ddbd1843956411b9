//! Executable checks of the recurrent-memory analysis: linear attention as
//! a recurrence, the unrolled selective scan, and how strongly each input
//! position reaches the final state.

mod influence;
mod linear;
mod unroll;

pub use influence::{
    block_inputs, coefficient_of_variation, final_state_jacobian, fit_decay, influence_profile, write_profile_csv, DecayFit, InfluenceMethod,
    InfluenceMode, InfluenceProfile, ProbeOptions,
};
pub use linear::{linear_attention_direct, linear_attention_scan, positive_features, LinearAttentionState};
pub use unroll::{scan_equivalence, unrolled_block_state, unrolled_state, EquivalenceReport};

