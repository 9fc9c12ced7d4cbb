use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hetfed_cli::config::SEED_ENV;
use hetfed_cli::{execute, run_sweep, summarize, CliError, ConfigStack, Grid, Selection};

#[derive(Parser)]
#[command(name = "hetfed", version, about = "Heterogeneous federated learning under label noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        /// Config files, later ones override earlier ones.
        #[arg(long = "config")]
        configs: Vec<PathBuf>,
        /// Dotted override, e.g. `--set hyperparams.lr=0.01`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Same noise rate on every client.
        #[arg(long)]
        noise_rate: Option<f64>,
        /// Output root; the run lands in a subdirectory named by its config hash.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Threads for client work inside the run.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run every cell of a grid.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        /// Cells run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Tabulate per-client accuracy of every run under a directory.
    Summarize {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long, value_enum, default_value = "final")]
        selection: Selection,
        /// Destination file, default `<runs>/summary.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            configs,
            sets,
            noise_rate,
            out,
            jobs,
        } => {
            let mut stack = ConfigStack::new();
            stack.env_seed(std::env::var(SEED_ENV).ok().as_deref())?;
            for c in &configs {
                stack.file(c)?;
            }
            for s in &sets {
                stack.set(s)?;
            }
            if let Some(r) = noise_rate {
                stack.noise_rate(r)?;
            }
            if let Some(o) = out {
                stack.push("--out", serde_json::json!({ "out": o }))?;
            }
            let cfg = stack.resolve()?;
            let record = execute(&cfg, jobs)?;
            let verb = if record.skipped { "already complete" } else { "done" };
            println!("{} {verb}", record.dir.display());
        }
        Command::Sweep { grid, jobs } => {
            let (g, root) = Grid::load(&grid)?;
            let report = run_sweep(&g, &root, jobs)?;
            for o in report.outcomes.iter().filter(|o| o.result.is_err()) {
                if let Err(e) = &o.result {
                    eprintln!("cell {} failed: {e}", o.run);
                }
            }
            println!(
                "{} cells, {} skipped, {} failed -> {}",
                report.outcomes.len(),
                report.skipped(),
                report.failed(),
                report.out.display()
            );
            if report.failed() > 0 {
                return Err(CliError::Run(format!("{} cells failed", report.failed())));
            }
        }
        Command::Summarize {
            runs,
            format: Format::Csv,
            selection,
            out,
        } => {
            let dest = summarize(&runs, selection, out.as_deref())?;
            println!("{}", dest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
