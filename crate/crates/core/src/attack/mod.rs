//! Hidden-state-alignment backdoor training.

mod centroid;
mod config;
mod loss;
mod optim;
mod train;

pub use centroid::CentroidTracker;
pub use config::{AttackConfig, OptimConfig, PoisonObjective, TrainConfig, TriggerKind};
pub use loss::{composite_loss, LossGraph, LossTerms};
pub use optim::Adam;
pub use train::{
    craft_trigger, run_attack, train_clean, AttackOutcome, CleanEpoch, CleanOutcome, EpochRecord, RoundTrigger,
};

