use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{accuracy, attack_success_rate, DefenseSpec};
use crate::error::{Error, Result};
use crate::model::VimModel;
use crate::numerics::{Scalar, SeededRng};
use crate::trigger::Trigger;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Seed of the per-sample defense streams.
    pub seed: u64,
    /// Per-channel color used by PatchDrop.
    pub fill: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseRow {
    pub attack: String,
    pub defense: String,
    pub cda: f64,
    pub asr: f64,
    pub clean_count: usize,
    pub asr_hits: usize,
    pub asr_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cda: f64,
    pub asr: f64,
    pub per_defense_asr: BTreeMap<String, f64>,
    pub rows: Vec<DefenseRow>,
    pub sample_count: usize,
    pub config_digest: Option<String>,
}

impl EvalReport {
    pub fn row(&self, defense: &str) -> Option<&DefenseRow> {
        self.rows.iter().find(|r| r.defense == defense)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Header plus one line per row.
    pub fn to_csv(&self) -> String {
        let digest = self.config_digest.as_deref().unwrap_or("");
        let mut s = String::from("attack,defense,cda,asr,clean_count,asr_hits,asr_count,config_digest\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.attack, r.defense, r.cda, r.asr, r.clean_count, r.asr_hits, r.asr_count, digest
            ));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, append: bool) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let csv = self.to_csv();
        if append && path.exists() {
            let mut f = std::fs::OpenOptions::new().append(true).open(path).map_err(io)?;
            let body = csv.split_once('\n').map_or("", |(_, b)| b);
            f.write_all(body.as_bytes()).map_err(io)
        } else {
            std::fs::write(path, csv).map_err(io)
        }
    }
}

/// CDA on `defense(x)` and ASR on `defense(trigger(x))` for one defense.
///
/// Sample `i` draws its defense randomness from its own stream, shared by
/// its clean and triggered versions.
pub fn evaluate<T: Scalar>(
    model: &VimModel<T>,
    images: &[f32],
    labels: &[usize],
    trigger: &Trigger,
    target: usize,
    defense: &DefenseSpec,
    opts: &EvalOptions,
) -> Result<DefenseRow> {
    defense.validate()?;
    let cfg = &model.config;
    let il = cfg.image_len();
    if labels.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    if images.len() != labels.len() * il {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            left: vec![images.len()],
            right: vec![labels.len(), cfg.height, cfg.width, cfg.channels],
        });
    }
    let mut clean = Vec::with_capacity(images.len());
    let mut triggered = Vec::with_capacity(images.len());
    for (i, img) in images.chunks(il).enumerate() {
        let stream = SeededRng::substream(opts.seed, "defense", i as u64);
        clean.extend(defense.apply(img, cfg, &opts.fill, &mut stream.clone())?);
        triggered.extend(defense.apply(&trigger.apply(img)?, cfg, &opts.fill, &mut stream.clone())?);
    }
    let cda = accuracy(&model.predict(&clean, labels.len())?, labels)?;
    let asr = attack_success_rate(&model.predict(&triggered, labels.len())?, labels, target)?;
    Ok(DefenseRow {
        attack: trigger.name().into(),
        defense: defense.label(),
        cda,
        asr: asr.rate,
        clean_count: labels.len(),
        asr_hits: asr.hits,
        asr_count: asr.total,
    })
}

/// Evaluates every defense; headline CDA/ASR are the undefended ones.
pub fn evaluate_grid<T: Scalar>(
    model: &VimModel<T>,
    images: &[f32],
    labels: &[usize],
    trigger: &Trigger,
    target: usize,
    defenses: &[DefenseSpec],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if defenses.is_empty() {
        return Err(Error::invalid("defense list is empty"));
    }
    let mut rows = Vec::with_capacity(defenses.len());
    for d in defenses {
        rows.push(evaluate(model, images, labels, trigger, target, d, opts)?);
    }
    let plain = match rows.iter().find(|r| r.defense == "none") {
        Some(r) => r.clone(),
        None => evaluate(model, images, labels, trigger, target, &DefenseSpec::None, opts)?,
    };
    Ok(EvalReport {
        cda: plain.cda,
        asr: plain.asr,
        per_defense_asr: rows.iter().map(|r| (r.defense.clone(), r.asr)).collect(),
        sample_count: labels.len(),
        rows,
        config_digest: None,
    })
}
