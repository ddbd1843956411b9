use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ssm_backdoor_cli::{attack_cmd, eval_cmd, heatmap_cmd, probe_cmd, train_clean_cmd, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ssm-backdoor", version, about = "Frequency-trigger backdoor experiments on a small state-space classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML experiment config; omitted keys take their defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set attack.rounds=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Model checkpoint to start from or evaluate.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Trigger JSON written by `attack` or `heatmap`.
    #[arg(long)]
    trigger: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the classifier without poisoning.
    TrainClean(Common),
    /// Co-train trigger and model.
    Attack(Common),
    /// Score a backdoored model under each configured defense.
    Eval(Common),
    /// Scan equivalence, linear attention and influence profiles.
    Probe(Common),
    /// Frequency-sensitivity heatmap and the trigger drawn from it.
    Heatmap(Common),
}

fn config(c: Common) -> anyhow::Result<ExperimentConfig> {
    let mut overrides = c.overrides;
    if let Some(s) = c.seed {
        overrides.push(format!("seed={s}"));
    }
    let mut cfg = ExperimentConfig::load(c.config.as_deref(), &overrides)?;
    if let Some(d) = c.output_dir {
        cfg.output_dir = d;
    }
    cfg.checkpoint = c.checkpoint.or(cfg.checkpoint);
    cfg.trigger = c.trigger.or(cfg.trigger);
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<serde_json::Value> {
    match cli.command {
        Command::TrainClean(c) => train_clean_cmd(&config(c)?),
        Command::Attack(c) => attack_cmd(&config(c)?),
        Command::Eval(c) => eval_cmd(&config(c)?),
        Command::Probe(c) => probe_cmd(&config(c)?),
        Command::Heatmap(c) => heatmap_cmd(&config(c)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}
