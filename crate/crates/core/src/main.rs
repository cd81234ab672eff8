use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use misd_core::cli;
use misd_core::Result;

#[derive(Parser)]
#[command(name = "misd", version, about = "Misclassification detection experiments")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides as `--key value` or `--key=value`, e.g. `--train.epochs 5`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier and write its checkpoint and training log.
    Train(Common),
    /// Score the test split with each configured method and write reports.
    Evaluate(Common),
    /// Estimate robust radii on the test split.
    Radius(Common),
    /// Test-split AURC for each method over a temperature list.
    SweepTemp(Common),
    /// Time each method and count model passes.
    Bench(Common),
}

fn run(command: Command) -> Result<()> {
    let (Command::Train(c) | Command::Evaluate(c) | Command::Radius(c) | Command::SweepTemp(c) | Command::Bench(c)) =
        &command;
    let cfg = cli::load_config(c.config.as_deref(), &c.overrides)?;
    match command {
        Command::Train(_) => {
            let out = cli::cmd_train(&cfg)?;
            if let Some(last) = out.log.epochs.last() {
                println!(
                    "epoch {} loss {:.6} accuracy {:.4} checksum {}",
                    last.epoch, last.loss, last.accuracy, out.log.checksum
                );
            }
        }
        Command::Evaluate(_) => {
            for (_, r) in cli::cmd_evaluate(&cfg)? {
                let fmt = |v: Option<f64>| v.map_or("null".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{:<8} aurc_x1000 {:.3} auroc {} fpr95 {} accuracy {:.4}",
                    r.method,
                    r.aurc_x1000,
                    fmt(r.auroc),
                    fmt(r.fpr95),
                    r.accuracy
                );
            }
        }
        Command::Radius(_) => {
            let s = cli::cmd_radius(&cfg)?;
            println!("{}", serde_json::to_string(&s).expect("summary serializes"));
        }
        Command::SweepTemp(_) => {
            for (m, t, a) in cli::cmd_sweep_temperature(&cfg)? {
                println!("{m} T={t} aurc={a:.6}");
            }
        }
        Command::Bench(_) => {
            for r in cli::cmd_bench(&cfg)? {
                println!(
                    "{:<8} fwd/ex {:.2} bwd/ex {:.2} images/s {:.1}",
                    r.method, r.fwd_per_ex, r.bwd_per_ex, r.images_per_s
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
