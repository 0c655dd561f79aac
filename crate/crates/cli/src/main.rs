use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tcgan_cli::{cmd_eval, cmd_report, cmd_train, cmd_traverse, CliError, TraversalSpec, Variable};

#[derive(Parser)]
#[command(name = "tcgan", version, about = "Train and inspect independence-constrained InfoGANs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint with all five metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config naming the dataset and metric settings.
        #[arg(long)]
        config: PathBuf,
        /// Overrides `metrics.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Report path (default: next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a latent traversal grid as PNG.
    Traverse {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Continuous code index, or dN for discrete code N.
        #[arg(long, default_value = "0")]
        variable: Variable,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true, default_values_t = [-2.0, 2.0])]
        range: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare runs: mean ± std per group of runs differing only by seed.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let s = cmd_train(&config, seed, out.as_deref())?;
            println!("trained {} steps into {}", s.steps, s.output_dir.display());
            if let (Some(e), Some(p)) = (s.best_explicitness, s.best_checkpoint) {
                println!("best explicitness {e:.4} at {}", p.display());
            }
        }
        Command::Eval { checkpoint, config, seed, out } => {
            let (report, path) = cmd_eval(&checkpoint, &config, seed, out.as_deref())?;
            print!("{}", report.table());
            println!("report written to {}", path.display());
        }
        Command::Traverse { checkpoint, variable, range, steps, rows, seed, out } => {
            let spec = TraversalSpec {
                variable,
                range: (range[0], range[1]),
                steps,
                rows,
                seed,
            };
            cmd_traverse(&checkpoint, &spec, &out)?;
            println!("grid written to {}", out.display());
        }
        Command::Report { runs, out } => print!("{}", cmd_report(&runs, out.as_deref())?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
