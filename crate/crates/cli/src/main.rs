//! `sll`: run split-learning experiments from TOML configs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sll_core::experiment::{parse_values, run_experiment, run_sweep, ExitStatus, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "sll", version, about = "Split-learning attack and defense laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides $SLL_OUTPUT_ROOT/<run.output_dir>.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Replace run.seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Worker threads (attackers for `run`, sub-runs for `sweep`).
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run one experiment per value of a single config path.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted config path, e.g. `defense.sigma`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values or a TOML array.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
    },
}

fn load(common: &Common) -> Result<toml::Value, String> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| format!("cannot read {}: {e}", common.config.display()))?;
    let mut doc: toml::Value = toml::from_str(&text).map_err(|e| format!("invalid config: {e}"))?;
    if let Some(seed) = common.seed_override {
        let seed = i64::try_from(seed).map_err(|_| "seed override must fit in i64".to_string())?;
        sll_core::experiment::set_path(&mut doc, "run.seed", toml::Value::Integer(seed)).map_err(|e| e.to_string())?;
    }
    Ok(doc)
}

fn run(cli: Cli) -> Result<ExitStatus, String> {
    match cli.command {
        Command::Run { common } => {
            let cfg = ExperimentConfig::from_toml_value(load(&common)?).map_err(|e| e.to_string())?;
            let opts = RunOptions { output_dir: common.output, threads: common.threads };
            let out = run_experiment(&cfg, &opts).map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&out.report).map_err(|e| e.to_string())?);
            eprintln!("status: {} -> {}", out.status.label(), out.output_dir.display());
            Ok(out.status)
        }
        Command::Sweep { common, axis, values } => {
            let doc = load(&common)?;
            let values = parse_values(&values).map_err(|e| e.to_string())?;
            let opts = RunOptions { output_dir: common.output, threads: common.threads };
            let (dir, rows) = run_sweep(&doc, &axis, &values, &opts).map_err(|e| e.to_string())?;
            for r in &rows {
                eprintln!("{axis}={}: {}", r.value, r.status.label());
            }
            eprintln!("sweep table: {}", dir.join("sweep.csv").display());
            Ok(if rows.iter().any(|r| r.status == ExitStatus::Error) { ExitStatus::Error } else { ExitStatus::Completed })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(ExitStatus::Error.code() as u8)
        }
    }
}
