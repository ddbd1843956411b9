use serde::{Deserialize, Serialize};

use super::loss::record_loss;
use super::{Adam, AttackConfig, CentroidTracker, LossTerms, TrainConfig, TriggerKind};
use crate::data::{batches, Dataset, Split};
use crate::defenses::{accuracy, evaluate, DefenseSpec, EvalOptions};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, VimModel};
use crate::numerics::{Scalar, SeededRng, Tape};
use crate::trigger::{build_mask, estimate_heatmap, generate_trigger, FrequencyHeatmap, PatchTrigger, Trigger, TriggerSpec};

/// One line of the attack training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub round: usize,
    pub epoch: usize,
    #[serde(rename = "L_c")]
    pub l_c: f64,
    #[serde(rename = "L_CE_poison")]
    pub l_ce_poison: f64,
    #[serde(rename = "L_st")]
    pub l_st: f64,
    #[serde(rename = "CDA")]
    pub cda: f64,
    #[serde(rename = "ASR")]
    pub asr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct CleanOutcome<T: Scalar> {
    pub model: VimModel<T>,
    pub log: Vec<CleanEpoch>,
}

impl<T: Scalar> CleanOutcome<T> {
    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|e| e.loss)
    }

    pub fn val_accuracy(&self) -> Option<f64> {
        self.log.last().map(|e| e.val_accuracy)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundTrigger {
    pub round: usize,
    pub heatmap: Option<FrequencyHeatmap>,
    pub trigger: Trigger,
    /// Parameters at the end of the round.
    pub checkpoint: Checkpoint,
}

#[derive(Debug, Clone)]
pub struct AttackOutcome<T: Scalar> {
    pub model: VimModel<T>,
    pub history: Vec<RoundTrigger>,
    pub log: Vec<EpochRecord>,
    pub centroid: CentroidTracker,
}

impl<T: Scalar> AttackOutcome<T> {
    /// Trigger of the last round, the one the final model was trained with.
    pub fn final_trigger(&self) -> Option<&Trigger> {
        self.history.last().map(|r| &r.trigger)
    }
}

struct PoisonPlan<'a> {
    trigger: &'a Trigger,
    selected: &'a [bool],
    tracker: &'a mut CentroidTracker,
}

#[derive(Default)]
struct EpochLosses {
    clean: f64,
    poison_ce: f64,
    state: f64,
    batches: usize,
    poisoned_batches: usize,
}

fn diverged(round: usize, epoch: usize, step: usize, loss: f64) -> Error {
    Error::Diverged { round, epoch, step, loss }
}

fn run_epoch<T: Scalar>(
    model: &mut VimModel<T>,
    adam: &mut Adam<T>,
    ds: &Dataset,
    cfg: &AttackConfig,
    (round, epoch, global): (usize, usize, u64),
    mut plan: Option<PoisonPlan<'_>>,
) -> Result<EpochLosses> {
    let mut acc = EpochLosses::default();
    for (step, batch) in batches(ds, Split::Train, cfg.optim.batch_size, cfg.seed, global)?.into_iter().enumerate() {
        let (images, labels) = ds.gather(&batch);
        let rows: Vec<usize> = match &plan {
            Some(p) => (0..batch.len()).filter(|&r| p.selected[batch[r]]).collect(),
            None => Vec::new(),
        };
        let poison = match &plan {
            Some(p) if !rows.is_empty() => Some((rows.as_slice(), p.trigger, p.tracker.require()?)),
            _ => None,
        };
        let mut tape = Tape::new();
        let graph = record_loss(&mut tape, model, &images, &labels, poison, cfg).map_err(|e| match e {
            Error::NonFinite { .. } => diverged(round, epoch, step, f64::NAN),
            other => other,
        })?;
        let LossTerms { clean, poison_ce, state, total, poisoned } = graph.terms;
        if !total.is_finite() {
            return Err(diverged(round, epoch, step, total));
        }
        tape.backward(graph.total)?;
        let grads: Vec<Vec<T>> = graph
            .bound
            .vars
            .iter()
            .map(|&v| tape.grad(v).map(<[T]>::to_vec).ok_or_else(|| Error::Backward("parameter without gradient".into())))
            .collect::<Result<_>>()?;
        adam.step(model, &grads)?;
        if let Some(p) = plan.as_mut() {
            let dn = model.config.state_len();
            let target_states: Vec<f64> = (0..labels.len())
                .filter(|&r| labels[r] == cfg.target_label)
                .flat_map(|r| graph.clean_states[r * dn..(r + 1) * dn].iter().copied())
                .collect();
            p.tracker.update(&target_states)?;
        }
        acc.batches += 1;
        acc.clean += clean;
        if poisoned > 0 {
            acc.poisoned_batches += 1;
            acc.poison_ce += poison_ce;
            acc.state += state;
        }
    }
    Ok(acc)
}

fn val_set(ds: &Dataset) -> Result<(Vec<f32>, Vec<usize>)> {
    let idx = ds.indices(Split::Val);
    if idx.is_empty() {
        return Err(Error::invalid("dataset has no validation split"));
    }
    Ok(ds.gather(&idx))
}

/// Cross-entropy training on the train split, validation accuracy per epoch.
pub fn train_clean<T: Scalar>(model: &VimModel<T>, ds: &Dataset, cfg: &TrainConfig) -> Result<CleanOutcome<T>> {
    cfg.optim.validate()?;
    let attack_cfg = AttackConfig {
        optim: cfg.optim,
        seed: cfg.seed,
        ..AttackConfig::default()
    };
    let (val_images, val_labels) = val_set(ds)?;
    let mut model = model.clone();
    let mut adam = Adam::new(&model, cfg.optim);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let l = run_epoch(&mut model, &mut adam, ds, &attack_cfg, (0, epoch, epoch as u64), None)?;
        let preds = model.predict(&val_images, val_labels.len())?;
        log.push(CleanEpoch {
            epoch,
            loss: l.clean / l.batches.max(1) as f64,
            val_accuracy: accuracy(&preds, &val_labels)?,
        });
    }
    Ok(CleanOutcome { model, log })
}

/// Estimates the heatmap of `model` on validation images and samples the
/// round's trigger from its top-k mask.
pub fn craft_trigger<T: Scalar>(
    model: &VimModel<T>,
    ds: &Dataset,
    cfg: &AttackConfig,
    round: usize,
) -> Result<(FrequencyHeatmap, TriggerSpec)> {
    let mut idx = ds.indices(Split::Val);
    if idx.is_empty() {
        return Err(Error::invalid("dataset has no validation split"));
    }
    SeededRng::substream(cfg.seed, "probe", round as u64).shuffle(&mut idx);
    idx.truncate(cfg.probe_count);
    let (images, labels) = ds.gather(&idx);
    let heatmap = estimate_heatmap(model, &images, &labels, cfg.epsilon)?;
    let mask = build_mask(&heatmap, cfg.k_percent)?;
    // same noise every round: only the mask follows the model
    let mut rng = SeededRng::substream(cfg.seed, "trigger", 0);
    let spec = generate_trigger(&mask, &mut rng, cfg.budget, ds.channels)?;
    Ok((heatmap, spec))
}

fn poison_selection(ds: &Dataset, cfg: &AttackConfig, global_epoch: u64) -> Vec<bool> {
    let train = ds.indices(Split::Train);
    let count = (cfg.poison_rate * train.len() as f64).round() as usize;
    let eligible: Vec<usize> = train.into_iter().filter(|&i| ds.labels[i] != cfg.target_label).collect();
    let mut rng = SeededRng::substream(cfg.seed, "poison", global_epoch);
    let mut selected = vec![false; ds.len()];
    for k in rng.sample_indices(eligible.len(), count.min(eligible.len())) {
        selected[eligible[k]] = true;
    }
    selected
}

/// Co-evolves trigger and model for `cfg.rounds` rounds: estimate the
/// heatmap, draw the trigger, then train `epochs_per_round` epochs on the
/// composite objective with a fresh poisoned subset each epoch.
pub fn run_attack<T: Scalar>(model: &VimModel<T>, ds: &Dataset, cfg: &AttackConfig) -> Result<AttackOutcome<T>> {
    cfg.validate(ds.num_classes)?;
    if model.config.image_len() != ds.image_len() {
        return Err(Error::invalid("model and dataset image shapes differ"));
    }
    let mut model = model.clone();
    let mut adam = Adam::new(&model, cfg.optim);
    let mut tracker = CentroidTracker::new(model.config.state_len(), cfg.centroid_momentum);
    let mut history = Vec::with_capacity(cfg.rounds);
    let mut log = Vec::new();
    if cfg.rounds == 0 {
        return Ok(AttackOutcome {
            model,
            history,
            log,
            centroid: tracker,
        });
    }

    let mut targets: Vec<usize> = ds
        .indices(Split::Train)
        .into_iter()
        .filter(|&i| ds.labels[i] == cfg.target_label)
        .collect();
    if targets.is_empty() {
        return Err(Error::invalid("no training samples of the target class"));
    }
    SeededRng::substream(cfg.seed, "centroid-init", 0).shuffle(&mut targets);
    targets.truncate(cfg.optim.batch_size);
    let (images, _) = ds.gather(&targets);
    let states = model.hidden_state(&images, targets.len())?;
    tracker.update(&states.iter().map(|v| v.as_f64()).collect::<Vec<_>>())?;

    let (val_images, val_labels) = val_set(ds)?;
    let eval_opts = EvalOptions {
        seed: cfg.seed,
        fill: ds.mean_color(Split::Train),
    };
    for round in 0..cfg.rounds {
        let (heatmap, trigger) = match cfg.trigger {
            TriggerKind::Resonant => {
                let (h, t) = craft_trigger(&model, ds, cfg, round)?;
                (Some(h), Trigger::Resonant(t))
            }
            TriggerKind::Patch => (None, Trigger::Patch(PatchTrigger::corner(ds.height, ds.width, ds.channels))),
        };
        for epoch in 0..cfg.epochs_per_round {
            let global = (round * cfg.epochs_per_round + epoch) as u64;
            let selected = poison_selection(ds, cfg, global);
            let plan = PoisonPlan {
                trigger: &trigger,
                selected: &selected,
                tracker: &mut tracker,
            };
            let l = run_epoch(&mut model, &mut adam, ds, cfg, (round, epoch, global), Some(plan))?;
            let row = evaluate(&model, &val_images, &val_labels, &trigger, cfg.target_label, &DefenseSpec::None, &eval_opts)?;
            log.push(EpochRecord {
                round,
                epoch,
                l_c: l.clean / l.batches.max(1) as f64,
                l_ce_poison: l.poison_ce / l.poisoned_batches.max(1) as f64,
                l_st: l.state / l.poisoned_batches.max(1) as f64,
                cda: row.cda,
                asr: row.asr,
            });
        }
        history.push(RoundTrigger {
            round,
            heatmap,
            trigger,
            checkpoint: Checkpoint::from_model(&model),
        });
    }
    Ok(AttackOutcome {
        model,
        history,
        log,
        centroid: tracker,
    })
}
