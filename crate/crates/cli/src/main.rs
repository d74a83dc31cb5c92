// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use cdp_cli::commands::{self, log};
use cdp_cli::Overrides;
use cdp_core::{AblationMode, CdpError, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

/// Conditional diffusion purification for CTR prediction.
///
/// Every failure prints a single `error[<class>]: <message>` line to stderr
/// and exits nonzero.
#[derive(Parser, Debug)]
#[command(name = "cdp", version)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic world and write train/test JSONL plus a sidecar.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset directory; writes a checkpoint and a per-epoch CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        log: PathBuf,
        /// Start from this checkpoint's weights (optimizer state restarts).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score the test split with a checkpoint and write metrics JSON.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional per-sample CSV of score, label, user, request and gates.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Train and evaluate all five ablation modes over the configured seeds.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Directory receiving ablation.json and ablation.txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the noise-schedule summary as JSON.
    InspectSchedule,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.overrides.resolve()?;
    log(format!("resolved config {}", cfg.to_json()));
    match cli.command {
        Command::Generate { out } => {
            let s = commands::generate(&cfg, &out)?;
            for split in [&s.train, &s.test] {
                println!(
                    "{}: {} records, positive rate {:.4}",
                    split.file, split.records, split.positive_rate
                );
            }
        }
        Command::Train {
            data,
            checkpoint,
            log: csv,
            resume,
        } => {
            let ds = commands::load_dataset(&data)?;
            let (_, rows) = commands::train(&cfg, &ds, &checkpoint, &csv, resume.as_deref())?;
            if let Some(last) = rows.last() {
                println!("{}", serde_json::to_string(last)?);
            }
        }
        Command::Eval {
            data,
            checkpoint,
            out,
            scores,
        } => {
            let ds = commands::load_dataset(&data)?;
            let expected = cli.overrides.touches_model().then_some(&cfg);
            let report = commands::eval(expected, &checkpoint, &ds, &out, scores.as_deref())?;
            println!("{}", serde_json::to_string(&report.metrics)?);
        }
        Command::Ablate { data, out } => {
            let ds = commands::load_dataset(&data)?;
            let table = commands::ablate(&cfg, &ds, &AblationMode::ALL)?;
            commands::write_ablation(&table, &out)?;
            print!("{}", table.text());
        }
        Command::InspectSchedule => {
            println!("{}", serde_json::to_string_pretty(&commands::inspect_schedule(&cfg)?)?);
        }
    }
    Ok(())
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let e: CdpError = e;
            eprintln!("error[{}]: {}", e.class(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
