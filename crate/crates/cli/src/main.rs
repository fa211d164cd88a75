//! `crossed-gibbs <simulate|sample|analyze|diagnose|verify> --config <path> [--seed N] [--out DIR]`
//!
//! Exit status: 0 on success, 1 on error (a JSON error report goes to
//! stderr and, when possible, `error.json` in the output directory), 3
//! when `verify` ran but a check failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use crossed_gibbs::experiment::ErrorReport;
use crossed_gibbs::{run_experiment, Command, ExperimentConfig, Overrides};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CommandArg {
    Simulate,
    Sample,
    Analyze,
    Diagnose,
    Verify,
}

impl From<CommandArg> for Command {
    fn from(c: CommandArg) -> Self {
        match c {
            CommandArg::Simulate => Command::Simulate,
            CommandArg::Sample => Command::Sample,
            CommandArg::Analyze => Command::Analyze,
            CommandArg::Diagnose => Command::Diagnose,
            CommandArg::Verify => Command::Verify,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "crossed-gibbs", version, about = "Gibbs samplers for crossed random effects")]
struct Cli {
    command: CommandArg,
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config file).
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_ERROR: u8 = 1;
const EXIT_CHECK_FAILED: u8 = 3;

fn load(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let cfg = ExperimentConfig::from_path(&cli.config)
        .with_context(|| format!("loading {}", cli.config.display()))?;
    Ok(cfg.with_overrides(&Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
    }))
}

fn report_error(command: Command, out: Option<&Path>, err: &anyhow::Error) {
    let report = match err.downcast_ref::<crossed_gibbs::Error>() {
        Some(e) => {
            let mut r = ErrorReport::new(command.name(), e);
            r.message = format!("{err:#}");
            r
        }
        None => ErrorReport {
            command: command.name().to_string(),
            kind: "other".to_string(),
            message: format!("{err:#}"),
        },
    };
    let text = serde_json::to_string_pretty(&report).unwrap_or_else(|_| report.message.clone());
    eprintln!("{text}");
    if let Some(dir) = out {
        if dir.is_dir() {
            // best effort; the report is already on stderr
            let _ = std::fs::write(dir.join("error.json"), format!("{text}\n"));
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = Command::from(cli.command);
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            report_error(command, cli.out.as_deref(), &e);
            return ExitCode::from(EXIT_ERROR);
        }
    };
    match run_experiment(command, &cfg).with_context(|| format!("{command} failed")) {
        Ok(outcome) => {
            println!("{command}: wrote {}", outcome.out_dir.display());
            for f in &outcome.manifest.outputs {
                println!("  {}", f.file);
            }
            println!("  manifest.json");
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("{command}: one or more checks failed, see verify.json");
                ExitCode::from(EXIT_CHECK_FAILED)
            }
        }
        Err(e) => {
            report_error(command, Some(&cfg.out), &e);
            ExitCode::from(EXIT_ERROR)
        }
    }
}
