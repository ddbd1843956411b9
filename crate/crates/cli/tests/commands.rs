use std::fs;
use std::path::Path;
use std::process::Command;

use ssm_backdoor::defenses::DefenseSpec;
use ssm_backdoor::model::Checkpoint;
use ssm_backdoor_cli::config::{apply_override, DatasetKind};
use ssm_backdoor_cli::{attack_cmd, eval_cmd, heatmap_cmd, probe_cmd, train_clean_cmd, ExperimentConfig};

fn tiny(dir: &Path) -> ExperimentConfig {
    let text = r#"
        seed = 3
        [dataset.synthetic]
        per_class = 30
        height = 16
        width = 16
        channels = 1
        [model]
        embed_dim = 8
        state_dim = 4
        num_blocks = 1
        [train]
        epochs = 1
        [attack]
        rounds = 1
        epochs_per_round = 1
        probe_count = 4
        [probe]
        equivalence_seeds = 20
        max_len = 8
        linear_cases = 10
        images = 2
    "#;
    let mut cfg = ExperimentConfig::from_toml(text, &[]).unwrap();
    cfg.output_dir = dir.to_path_buf();
    cfg
}

fn read(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn empty_config_is_all_defaults() {
    let cfg = ExperimentConfig::from_toml("", &[]).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    assert_eq!(cfg.eval.defenses, DefenseSpec::default_grid());
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(ExperimentConfig::from_toml("sed = 1", &[]).is_err());
    assert!(ExperimentConfig::from_toml("[attack]\nlamda = 1.0", &[]).is_err());
}

#[test]
fn overrides_parse_literals_and_nest() {
    let cfg = ExperimentConfig::from_toml(
        "[attack]\nrounds = 5",
        &["attack.rounds=2".into(), "attack.lambda=0.25".into(), "output_dir=/tmp/x y".into(), "dataset.kind=\"mnist\"".into()],
    )
    .unwrap();
    assert_eq!(cfg.attack.rounds, 2);
    assert_eq!(cfg.attack.lambda, 0.25);
    assert_eq!(cfg.output_dir, Path::new("/tmp/x y"));
    assert_eq!(cfg.dataset.kind, DatasetKind::Mnist);

    let mut t = toml::Table::new();
    apply_override(&mut t, "a.b.c=true").unwrap();
    assert_eq!(t["a"]["b"]["c"].as_bool(), Some(true));
    assert!(apply_override(&mut t, "a.b.c.d=1").is_err());
    assert!(apply_override(&mut t, "novalue").is_err());
    assert!(apply_override(&mut t, "a..b=1").is_err());
}

#[test]
fn top_seed_reaches_every_component() {
    let cfg = ExperimentConfig::from_toml("seed = 11\n[attack]\nseed = 4", &[]).unwrap();
    assert_eq!(cfg.attack.seed, 11);
    assert_eq!(cfg.train.seed, 11);
    assert_eq!(cfg.dataset.synthetic.seed, 11);
}

#[test]
fn digest_tracks_content() {
    let a = ExperimentConfig::default();
    let mut b = a.clone();
    b.output_dir = "elsewhere".into();
    assert_eq!(a.digest(), b.digest());
    assert_eq!(a.digest().len(), 64);
    b.attack.lambda = 0.5;
    assert_ne!(a.digest(), b.digest());
}

#[test]
fn missing_dataset_path_fails_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.dataset.kind = DatasetKind::Mnist;
    let err = train_clean_cmd(&cfg).unwrap_err();
    assert!(format!("{err:#}").contains("dataset.path"), "{err:#}");
    assert!(!dir.path().join("train_metrics.json").exists());
}

#[test]
fn train_clean_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = train_clean_cmd(&tiny(a.path())).unwrap();
    train_clean_cmd(&tiny(b.path())).unwrap();
    for name in ["train_metrics.json", "train_log.jsonl", "clean.ckpt.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    assert_eq!(ma["config_digest"], serde_json::json!(tiny(a.path()).digest()));
    let acc = ma["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn zero_rounds_exports_trigger_and_keeps_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    train_clean_cmd(&cfg).unwrap();
    cfg.checkpoint = Some(dir.path().join("clean.ckpt.json"));
    cfg.attack.rounds = 0;
    let m = attack_cmd(&cfg).unwrap();
    for name in ["trigger.json", "trigger.ppm", "trigger.bin", "heatmap_round0.csv", "attack_metrics.json"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let before: Checkpoint = serde_json::from_value(read(&dir.path().join("clean.ckpt.json"))).unwrap();
    let after: Checkpoint = serde_json::from_value(read(&dir.path().join("attacked.ckpt.json"))).unwrap();
    assert_eq!(before, after);
    assert_eq!(m["rounds"].as_array().unwrap().len(), 0);
}

#[test]
fn eval_rows_match_attack_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    let attack = attack_cmd(&cfg).unwrap();
    let log = fs::read_to_string(dir.path().join("attack_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(log.contains("\"L_st\"") && log.contains("config_digest"));
    let round0: Checkpoint = serde_json::from_value(read(&dir.path().join("round0.ckpt.json"))).unwrap();
    let last: Checkpoint = serde_json::from_value(read(&dir.path().join("attacked.ckpt.json"))).unwrap();
    assert_eq!(round0, last);

    cfg.eval.defenses = vec![DefenseSpec::None];
    let single = eval_cmd(&cfg).unwrap();
    let rows = single["reports"][0]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["cda"], attack["cda"]);
    assert_eq!(rows[0]["asr"], attack["asr"]);

    cfg.eval.defenses = DefenseSpec::default_grid();
    cfg.eval.baseline_checkpoint = Some(dir.path().join("attacked.ckpt.json"));
    let grid = eval_cmd(&cfg).unwrap();
    let reports = grid["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 2);
    for r in reports {
        let rows = r["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 4);
        for row in rows {
            for key in ["cda", "asr"] {
                let v = row[key].as_f64().unwrap();
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
    let csv = fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    assert_eq!(csv.lines().filter(|l| l.starts_with("patch,")).count(), 4);

    cfg.eval.defenses.clear();
    assert!(eval_cmd(&cfg).is_err());
}

#[test]
fn eval_requires_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let err = eval_cmd(&tiny(dir.path())).unwrap_err();
    assert!(format!("{err:#}").contains("missing artifact"), "{err:#}");
}

#[test]
fn heatmap_and_probe_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let h = heatmap_cmd(&cfg).unwrap();
    assert!(dir.path().join("heatmap.csv").is_file());
    assert!(!h["mask"].as_array().unwrap().is_empty());

    let p = probe_cmd(&cfg).unwrap();
    for section in ["scan_equivalence", "linear_attention", "influence"] {
        assert!(p.get(section).is_some(), "{section}");
    }
    assert!(p["scan_equivalence"]["max_abs_error"].as_f64().unwrap() < 1e-9);
    assert!(p["linear_attention"]["max_abs_error"].as_f64().unwrap() < 1e-9);
    let slope = p["influence"]["forced"]["fit"]["slope"].as_f64().unwrap();
    assert!((slope - 0.5f64.ln()).abs() < 0.05, "{slope}");
    assert!(dir.path().join("probe_report.json").is_file());
}

#[test]
fn binary_reports_errors_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ssm-backdoor"))
        .args(["train-clean", "--set", "dataset.kind=cifar10", "--output-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"].as_str().unwrap().contains("dataset.path"));
}

#[test]
fn binary_runs_heatmap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        "[dataset.synthetic]\nper_class = 20\nheight = 8\nwidth = 8\nchannels = 1\n[attack]\nprobe_count = 2\n",
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ssm-backdoor"))
        .args(["heatmap", "--seed", "5", "--config"])
        .arg(&cfg)
        .arg("--output-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["command"], "heatmap");
    assert!(dir.path().join("trigger.ppm").is_file());
}
