//! The five subcommands. Each returns the JSON summary it also wrote to
//! disk, with the config digest embedded.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use ssm_backdoor::attack::{craft_trigger, run_attack, train_clean, TriggerKind};
use ssm_backdoor::data::{Dataset, Split};
use ssm_backdoor::defenses::{accuracy, evaluate, evaluate_grid, DefenseSpec, EvalOptions, EvalReport};
use ssm_backdoor::model::{load_checkpoint, save_checkpoint, VimModel};
use ssm_backdoor::numerics::{Precision, Scalar, SeededRng};
use ssm_backdoor::theory::{
    coefficient_of_variation, fit_decay, influence_profile, linear_attention_direct, linear_attention_scan,
    positive_features, scan_equivalence, write_profile_csv, InfluenceMethod, InfluenceMode, ProbeOptions,
};
use ssm_backdoor::trigger::{write_delta_image, write_heatmap_csv, write_raw_delta, PatchTrigger, Trigger};

use crate::config::{hex, ExperimentConfig};

pub const CLEAN_CHECKPOINT: &str = "clean.ckpt.json";
pub const ATTACKED_CHECKPOINT: &str = "attacked.ckpt.json";
pub const TRIGGER_JSON: &str = "trigger.json";

fn prepare(cfg: &ExperimentConfig) -> Result<(Dataset, String)> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let ds = cfg.load_dataset()?;
    if cfg.attack.target_label >= ds.num_classes {
        bail!("attack.target_label {} outside {} classes", cfg.attack.target_label, ds.num_classes);
    }
    Ok((ds, cfg.digest()))
}

fn out(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_jsonl<S: Serialize>(path: &Path, rows: &[S], digest: &str) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        let mut v = serde_json::to_value(r)?;
        v["config_digest"] = json!(digest);
        writeln!(f, "{}", serde_json::to_string(&v)?)?;
    }
    Ok(())
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(bytes)))
}

fn initial_model<T: Scalar>(cfg: &ExperimentConfig, ds: &Dataset) -> Result<VimModel<T>> {
    let model = match &cfg.checkpoint {
        Some(p) => load_checkpoint::<T>(p)?,
        None => VimModel::<T>::random(cfg.vim_config(ds), cfg.seed)?,
    };
    if model.config.image_len() != ds.image_len() || model.config.num_classes != ds.num_classes {
        bail!("checkpoint shape does not match the dataset");
    }
    Ok(model)
}

fn test_accuracy<T: Scalar>(model: &VimModel<T>, ds: &Dataset) -> Result<f64> {
    let (images, labels) = ds.gather(&ds.indices(Split::Test));
    let preds = model.predict(&images, labels.len())?;
    Ok(accuracy(&preds, &labels)?)
}

fn eval_options(cfg: &ExperimentConfig, ds: &Dataset) -> EvalOptions {
    EvalOptions {
        seed: cfg.seed,
        fill: ds.mean_color(Split::Train),
    }
}

/// Writes `trigger.json`, the δ image and, for resonant triggers, the raw
/// δ. Returns the SHA-256 of `trigger.json`.
fn export_trigger(cfg: &ExperimentConfig, trigger: &Trigger) -> Result<String> {
    match trigger {
        Trigger::Resonant(spec) => {
            write_delta_image(&spec.delta, out(cfg, "trigger.ppm"))?;
            write_raw_delta(&spec.delta, out(cfg, "trigger.bin"))?;
        }
        Trigger::Patch(p) => {
            let blank = vec![0.0f32; p.height * p.width * p.channels];
            let stamped: Vec<f64> = p.apply(&blank)?.into_iter().map(f64::from).collect();
            let delta = ssm_backdoor::numerics::Tensor::from_f64(vec![p.height, p.width, p.channels], &stamped)?;
            write_delta_image(&delta, out(cfg, "trigger.ppm"))?;
        }
    }
    let path = out(cfg, TRIGGER_JSON);
    write_json(&path, trigger)?;
    file_sha256(&path)
}

pub fn train_clean_cmd(cfg: &ExperimentConfig) -> Result<Value> {
    match cfg.precision {
        Precision::F32 => train_clean_typed::<f32>(cfg),
        Precision::F64 => train_clean_typed::<f64>(cfg),
    }
}

fn train_clean_typed<T: Scalar>(cfg: &ExperimentConfig) -> Result<Value> {
    let (ds, digest) = prepare(cfg)?;
    let model = initial_model::<T>(cfg, &ds)?;
    let outcome = train_clean(&model, &ds, &cfg.train)?;
    save_checkpoint(&outcome.model, out(cfg, CLEAN_CHECKPOINT))?;
    write_jsonl(&out(cfg, "train_log.jsonl"), &outcome.log, &digest)?;
    let metrics = json!({
        "command": "train-clean",
        "config_digest": digest,
        "dataset": ds.provenance,
        "epochs": cfg.train.epochs,
        "final_loss": outcome.final_loss(),
        "val_accuracy": outcome.val_accuracy(),
        "accuracy": test_accuracy(&outcome.model, &ds)?,
        "checkpoint": CLEAN_CHECKPOINT,
    });
    write_json(&out(cfg, "train_metrics.json"), &metrics)?;
    Ok(metrics)
}

pub fn attack_cmd(cfg: &ExperimentConfig) -> Result<Value> {
    match cfg.precision {
        Precision::F32 => attack_typed::<f32>(cfg),
        Precision::F64 => attack_typed::<f64>(cfg),
    }
}

fn attack_typed<T: Scalar>(cfg: &ExperimentConfig) -> Result<Value> {
    let (ds, digest) = prepare(cfg)?;
    let model = initial_model::<T>(cfg, &ds)?;
    let baseline = test_accuracy(&model, &ds)?;
    let outcome = run_attack(&model, &ds, &cfg.attack)?;

    let mut rounds = Vec::new();
    for r in &outcome.history {
        if let Some(h) = &r.heatmap {
            write_heatmap_csv(h, out(cfg, &format!("heatmap_round{}.csv", r.round)))?;
        }
        let ckpt = format!("round{}.ckpt.json", r.round);
        r.checkpoint.save(out(cfg, &ckpt))?;
        let epochs: Vec<_> = outcome.log.iter().filter(|e| e.round == r.round).collect();
        rounds.push(json!({
            "round": r.round,
            "heatmap_argmax": r.heatmap.as_ref().map(|h| h.argmax()),
            "checkpoint": ckpt,
            "mask_bins": match &r.trigger { Trigger::Resonant(s) => Some(s.mask.count()), Trigger::Patch(_) => None },
            "epochs": epochs,
        }));
    }
    // With no rounds the trigger still gets drawn from the untouched model.
    let trigger = match outcome.final_trigger() {
        Some(t) => t.clone(),
        None => match cfg.attack.trigger {
            TriggerKind::Resonant => {
                let (h, spec) = craft_trigger(&outcome.model, &ds, &cfg.attack, 0)?;
                write_heatmap_csv(&h, out(cfg, "heatmap_round0.csv"))?;
                Trigger::Resonant(spec)
            }
            TriggerKind::Patch => Trigger::Patch(PatchTrigger::corner(ds.height, ds.width, ds.channels)),
        },
    };
    let trigger_sha256 = export_trigger(cfg, &trigger)?;
    save_checkpoint(&outcome.model, out(cfg, ATTACKED_CHECKPOINT))?;
    write_jsonl(&out(cfg, "attack_log.jsonl"), &outcome.log, &digest)?;

    let (images, labels) = ds.gather(&ds.indices(Split::Test));
    let row = evaluate(
        &outcome.model,
        &images,
        &labels,
        &trigger,
        cfg.attack.target_label,
        &DefenseSpec::None,
        &eval_options(cfg, &ds),
    )?;
    let metrics = json!({
        "command": "attack",
        "config_digest": digest,
        "dataset": ds.provenance,
        "trigger": trigger.name(),
        "rounds": rounds,
        "baseline_accuracy": baseline,
        "cda": row.cda,
        "asr": row.asr,
        "asr_hits": row.asr_hits,
        "asr_count": row.asr_count,
        "trigger_sha256": trigger_sha256,
        "checkpoint": ATTACKED_CHECKPOINT,
    });
    write_json(&out(cfg, "attack_metrics.json"), &metrics)?;
    Ok(metrics)
}

pub fn eval_cmd(cfg: &ExperimentConfig) -> Result<Value> {
    match cfg.precision {
        Precision::F32 => eval_typed::<f32>(cfg),
        Precision::F64 => eval_typed::<f64>(cfg),
    }
}

fn read_trigger(path: &Path) -> Result<Trigger> {
    let text = fs::read_to_string(path).with_context(|| format!("reading trigger {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing trigger {}", path.display()))
}

fn eval_typed<T: Scalar>(cfg: &ExperimentConfig) -> Result<Value> {
    if cfg.eval.defenses.is_empty() {
        bail!("eval.defenses is empty");
    }
    let ckpt = cfg.checkpoint.clone().unwrap_or_else(|| out(cfg, ATTACKED_CHECKPOINT));
    let trig = cfg.trigger.clone().unwrap_or_else(|| out(cfg, TRIGGER_JSON));
    for p in [&ckpt, &trig] {
        if !p.is_file() {
            bail!("missing artifact {}", p.display());
        }
    }
    let (ds, digest) = prepare(cfg)?;
    let model = load_checkpoint::<T>(&ckpt)?;
    let trigger = read_trigger(&trig)?;
    let (images, labels) = ds.gather(&ds.indices(Split::Test));
    let opts = eval_options(cfg, &ds);
    let target = cfg.attack.target_label;

    let mut reports: Vec<EvalReport> = Vec::new();
    let mut report = evaluate_grid(&model, &images, &labels, &trigger, target, &cfg.eval.defenses, &opts)?;
    report.config_digest = Some(digest.clone());
    reports.push(report);
    if let Some(base) = &cfg.eval.baseline_checkpoint {
        let bm = load_checkpoint::<T>(base)?;
        let patch = Trigger::Patch(PatchTrigger::corner(ds.height, ds.width, ds.channels));
        let mut report = evaluate_grid(&bm, &images, &labels, &patch, target, &cfg.eval.defenses, &opts)?;
        report.config_digest = Some(digest.clone());
        reports.push(report);
    }

    let csv_path = out(cfg, "eval.csv");
    let mut csv = String::new();
    for (i, r) in reports.iter().enumerate() {
        let text = r.to_csv();
        // keep a single header line
        csv.push_str(if i == 0 { &text } else { text.split_once('\n').map_or("", |(_, rest)| rest) });
    }
    fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
    let summary = json!({
        "command": "eval",
        "config_digest": digest,
        "checkpoint": ckpt,
        "trigger": trig,
        "reports": reports,
    });
    write_json(&out(cfg, "eval.json"), &summary)?;
    Ok(summary)
}

pub fn heatmap_cmd(cfg: &ExperimentConfig) -> Result<Value> {
    match cfg.precision {
        Precision::F32 => heatmap_typed::<f32>(cfg),
        Precision::F64 => heatmap_typed::<f64>(cfg),
    }
}

fn heatmap_typed<T: Scalar>(cfg: &ExperimentConfig) -> Result<Value> {
    let (ds, digest) = prepare(cfg)?;
    let model = initial_model::<T>(cfg, &ds)?;
    let (heatmap, spec) = craft_trigger(&model, &ds, &cfg.attack, 0)?;
    write_heatmap_csv(&heatmap, out(cfg, "heatmap.csv"))?;
    let mask = spec.mask.selected();
    let trigger_sha256 = export_trigger(cfg, &Trigger::Resonant(spec))?;
    let summary = json!({
        "command": "heatmap",
        "config_digest": digest,
        "epsilon": heatmap.epsilon,
        "probe_count": heatmap.probe_count,
        "argmax": heatmap.argmax(),
        "mask": mask,
        "trigger_sha256": trigger_sha256,
    });
    write_json(&out(cfg, "heatmap.json"), &summary)?;
    Ok(summary)
}

/// Scan/unroll and linear-attention equivalence plus influence profiles.
pub fn probe_cmd(cfg: &ExperimentConfig) -> Result<Value> {
    let (ds, digest) = prepare(cfg)?;
    let p = &cfg.probe;
    let mcfg = cfg.vim_config(&ds);

    let eq = scan_equivalence(0..p.equivalence_seeds, p.max_len, mcfg.embed_dim, mcfg.state_dim)?;
    let linear = linear_equivalence(cfg.seed, p.linear_cases, p.max_len)?;

    let model = initial_model::<f64>(cfg, &ds)?;
    let mut idx = ds.indices(Split::Val);
    SeededRng::substream(cfg.seed, "probe-images", 0).shuffle(&mut idx);
    idx.truncate(p.images);
    if idx.is_empty() {
        bail!("dataset has no validation images to probe with");
    }
    let (images, _) = ds.gather(&idx);
    let opts = ProbeOptions {
        block: p.block,
        fd_step: p.fd_step,
        seed: cfg.seed,
    };
    let natural = influence_profile(&model, &images, idx.len(), InfluenceMode::Localized(InfluenceMethod::Gradient), &opts)?;
    let mut forced_model = model.clone();
    forced_model.gate_override = Some(p.forced_gate);
    let forced = influence_profile(&forced_model, &images, idx.len(), InfluenceMode::Localized(InfluenceMethod::Gradient), &opts)?;
    let trigger = match &cfg.trigger {
        Some(path) => read_trigger(path)?,
        None => Trigger::Resonant(craft_trigger(&model.cast::<f32>(), &ds, &cfg.attack, 0)?.1),
    };
    let delta = match &trigger {
        Trigger::Resonant(s) => s.delta.clone(),
        Trigger::Patch(_) => bail!("distributed influence needs a resonant trigger"),
    };
    let distributed = influence_profile(&model, &images, idx.len(), InfluenceMode::Distributed(&delta), &opts)?;
    write_profile_csv(&natural, out(cfg, "influence_localized.csv"))?;
    write_profile_csv(&forced, out(cfg, "influence_forced.csv"))?;
    write_profile_csv(&distributed, out(cfg, "influence_distributed.csv"))?;

    let natural_fit = fit_decay(&natural.influence)?;
    let forced_fit = fit_decay(&forced.influence)?;
    let natural_span = span(&natural.influence);
    let report = json!({
        "command": "probe",
        "config_digest": digest,
        "scan_equivalence": {
            "cases": eq.cases,
            "max_len": p.max_len,
            "max_abs_error": eq.max_abs_error,
        },
        "linear_attention": linear,
        "influence": {
            "block": p.block,
            "probe_images": idx.len(),
            "localized": { "fit": natural_fit, "span_ratio": natural_span, "profile": natural.influence },
            "forced": {
                "gate": p.forced_gate,
                "expected_slope": p.forced_gate.ln(),
                "fit": forced_fit,
                "profile": forced.influence,
            },
            "distributed": {
                "coefficient_of_variation": coefficient_of_variation(&distributed.influence)?,
                "span_ratio": span(&distributed.influence),
                "profile": distributed.influence,
            },
        },
    });
    write_json(&out(cfg, "probe_report.json"), &report)?;
    Ok(report)
}

/// Largest over smallest positive value.
fn span(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(0.0, f64::max);
    let min = values.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
    max / min
}

fn linear_equivalence(seed: u64, cases: u64, max_len: usize) -> Result<Value> {
    let (dk, dv) = (4, 3);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let mut rng = SeededRng::substream(seed, "linear-attention", case);
        let steps = 1 + rng.below(max_len);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gaussian()).collect() };
        let q = positive_features(&draw(steps * dk));
        let k = positive_features(&draw(steps * dk));
        let v = draw(steps * dv);
        let a = linear_attention_scan(&q, &k, &v, steps, dk, dv)?;
        let b = linear_attention_direct(&q, &k, &v, steps, dk, dv)?;
        worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    Ok(json!({ "cases": cases, "max_abs_error": worst }))
}
