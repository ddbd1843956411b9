//! Experiment configuration: one TOML file, every key optional, with
//! `key.path=value` overrides layered on top.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ssm_backdoor::attack::{AttackConfig, TrainConfig};
use ssm_backdoor::data::{load_cifar10, load_mnist_idx, make_synthetic_with, read_dump, Dataset, SyntheticSpec};
use ssm_backdoor::defenses::DefenseSpec;
use ssm_backdoor::model::VimConfig;
use ssm_backdoor::numerics::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Synthetic,
    Mnist,
    Cifar10,
    Dump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Directory for `mnist`, `cifar10` and `dump`.
    pub path: Option<PathBuf>,
    /// Share of the training split carved off for validation when the
    /// source ships without one.
    pub val_fraction: f64,
    pub synthetic: SyntheticSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            path: None,
            val_fraction: 0.1,
            synthetic: SyntheticSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub state_dim: usize,
    pub num_blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let v = VimConfig::for_images(32, 32, 3, 2);
        Self {
            patch_size: v.patch_size,
            embed_dim: v.embed_dim,
            state_dim: v.state_dim,
            num_blocks: v.num_blocks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub defenses: Vec<DefenseSpec>,
    /// Checkpoint of a model backdoored with the corner patch; when set,
    /// `eval` reports its rows next to the resonant ones.
    pub baseline_checkpoint: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            defenses: DefenseSpec::default_grid(),
            baseline_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub equivalence_seeds: u64,
    pub max_len: usize,
    pub linear_cases: u64,
    pub images: usize,
    pub block: usize,
    pub forced_gate: f64,
    pub fd_step: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            equivalence_seeds: 200,
            max_len: 16,
            linear_cases: 50,
            images: 8,
            block: 0,
            forced_gate: 0.5,
            fd_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Sole source of randomness; copied into every component seed.
    pub seed: u64,
    pub precision: Precision,
    pub output_dir: PathBuf,
    /// Model to start from (`attack`, `heatmap`, `probe`) or to score (`eval`).
    pub checkpoint: Option<PathBuf>,
    /// Trigger JSON for `eval` and `probe`.
    pub trigger: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub eval: EvalConfig,
    pub probe: ProbeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F32,
            output_dir: PathBuf::from("runs/default"),
            checkpoint: None,
            trigger: None,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
            eval: EvalConfig::default(),
            probe: ProbeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text, applies `overrides`, and pins every component
    /// seed to the top-level one.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: Self = toml::Value::Table(table).try_into().context("invalid config")?;
        cfg.pin_seeds();
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn pin_seeds(&mut self) {
        self.dataset.synthetic.seed = self.seed;
        self.train.seed = self.seed;
        self.attack.seed = self.seed;
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        match self.dataset.kind {
            DatasetKind::Synthetic => {}
            kind => match &self.dataset.path {
                None => bail!("dataset.path is required for dataset kind {kind:?}"),
                Some(p) if !p.is_dir() => bail!("dataset.path {} is not a directory", p.display()),
                Some(_) => {}
            },
        }
        if !(0.0..1.0).contains(&self.dataset.val_fraction) {
            bail!("dataset.val_fraction must lie in [0, 1)");
        }
        if self.train.optim.batch_size == 0 {
            bail!("train.optim.batch_size must be positive");
        }
        for d in &self.eval.defenses {
            d.validate()?;
        }
        if !(self.probe.forced_gate > 0.0 && self.probe.forced_gate < 1.0) {
            bail!("probe.forced_gate must lie in (0, 1)");
        }
        if self.probe.max_len == 0 || self.probe.images == 0 {
            bail!("probe.max_len and probe.images must be positive");
        }
        for p in [&self.checkpoint, &self.trigger, &self.eval.baseline_checkpoint].into_iter().flatten() {
            if !p.is_file() {
                bail!("{} does not exist", p.display());
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON rendering.
    /// Hash of everything except `output_dir`, so the same experiment
    /// written to two places reports the same digest.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output_dir");
        }
        let json = serde_json::to_vec(&value).expect("config serializes");
        hex(&Sha256::digest(json))
    }

    pub fn vim_config(&self, ds: &Dataset) -> VimConfig {
        VimConfig {
            height: ds.height,
            width: ds.width,
            channels: ds.channels,
            patch_size: self.model.patch_size,
            embed_dim: self.model.embed_dim,
            state_dim: self.model.state_dim,
            num_blocks: self.model.num_blocks,
            num_classes: ds.num_classes,
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let path = || self.dataset.path.as_deref().expect("validated");
        let mut ds = match self.dataset.kind {
            DatasetKind::Synthetic => return Ok(make_synthetic_with(&self.dataset.synthetic)?),
            DatasetKind::Dump => return Ok(read_dump(path())?),
            DatasetKind::Mnist => load_mnist_idx(path())?,
            DatasetKind::Cifar10 => load_cifar10(path())?,
        };
        ds.carve_validation(self.dataset.val_fraction, self.seed)?;
        Ok(ds)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Applies `a.b.c=value`; `value` is read as a TOML literal and falls
/// back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override {assignment:?} is not key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        bail!("override key {key:?} is malformed");
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let (last, parents) = path.split_last().expect("non-empty");
    let mut node = table;
    for p in parents {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override key {key:?} descends into a non-table"),
        };
    }
    node.insert(last.to_string(), value);
    Ok(())
}
