use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::invalid("optimizer needs lr > 0, betas in [0, 1), eps > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        Ok(())
    }
}

/// Plain cross-entropy training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            optim: OptimConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    /// Heatmap-driven frequency trigger, regenerated every round.
    Resonant,
    /// Fixed corner checkerboard.
    Patch,
}

/// What the poisoned samples' cross-entropy is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoisonObjective {
    /// `CE(f(x_p), y_t)`.
    TargetLabel,
    /// `CE(f(x_c), y_c)` over the poisoned subset, for ablation.
    CleanLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub target_label: usize,
    pub poison_rate: f64,
    /// Weight of the state-alignment term.
    pub lambda: f64,
    pub k_percent: f64,
    /// Heatmap probe amplitude.
    pub epsilon: f64,
    /// L∞ bound of the trigger.
    pub budget: f64,
    pub rounds: usize,
    pub epochs_per_round: usize,
    /// Validation images used to estimate each heatmap.
    pub probe_count: usize,
    pub centroid_momentum: f64,
    pub trigger: TriggerKind,
    pub objective: PoisonObjective,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            target_label: 0,
            poison_rate: 0.1,
            lambda: 1.0,
            k_percent: 1.0,
            epsilon: 8.0 / 255.0,
            budget: 8.0 / 255.0,
            rounds: 3,
            epochs_per_round: 5,
            probe_count: 64,
            centroid_momentum: 0.9,
            trigger: TriggerKind::Resonant,
            objective: PoisonObjective::TargetLabel,
            // the poison branch destabilizes at 1e-3
            optim: OptimConfig {
                lr: 3e-4,
                ..OptimConfig::default()
            },
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        self.optim.validate()?;
        if self.target_label >= num_classes {
            return Err(Error::invalid(format!(
                "target label {} outside {num_classes} classes",
                self.target_label
            )));
        }
        if !(0.0..=1.0).contains(&self.poison_rate) {
            return Err(Error::invalid(format!("poison_rate {} outside [0, 1]", self.poison_rate)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        if !(self.k_percent > 0.0 && self.k_percent <= 100.0) {
            return Err(Error::invalid(format!("k_percent {} outside (0, 100]", self.k_percent)));
        }
        if !(self.budget > 0.0) || !(self.epsilon >= 0.0) {
            return Err(Error::invalid("budget must be positive and epsilon non-negative"));
        }
        if !(0.0..=1.0).contains(&self.centroid_momentum) {
            return Err(Error::invalid("centroid momentum outside [0, 1]"));
        }
        if self.probe_count == 0 {
            return Err(Error::invalid("probe_count must be positive"));
        }
        Ok(())
    }
}
