//! `gbdp`: train, simulate, exactly solve, and verify gradient-bounded
//! dynamic programs described by a JSON run configuration.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CommonArgs, ExactArgs, SimulateArgs, VerifyArgs};

#[derive(Parser)]
#[command(name = "gbdp", version, about = "Gradient-bounded dynamic programming solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the training loop and write trace.csv, cuts.jsonl, summary.json.
    Train {
        /// Run configuration (JSON).
        config: PathBuf,
        /// Override the root seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a frozen policy and write profits.csv, histogram.csv,
    /// summary.json.
    Simulate {
        config: PathBuf,
        /// Cut checkpoint to load (default: <out>/cuts.jsonl).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of booking periods (default: config `replications`).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full-enumeration solve; writes exact_values.bin and prints V_1(0).
    Exact {
        config: PathBuf,
        /// State-time evaluation budget before refusing.
        #[arg(long, default_value_t = 10_000_000)]
        cap: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a checkpoint against an exact value table.
    Verify {
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Exact table produced by `gbdp exact` (default:
        /// <out>/exact_values.bin).
        #[arg(long)]
        exact: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("GBDP_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                {
                    eprintln!("cannot configure {n} worker threads: {e}");
                    return ExitCode::from(2);
                }
            }
            _ => {
                eprintln!("GBDP_THREADS must be a positive integer, got {threads:?}");
                return ExitCode::from(2);
            }
        }
    }

    let cli = Cli::parse();
    let code = match cli.command {
        Command::Train { config, seed, out } => commands::cmd_train(CommonArgs {
            config_path: config,
            seed,
            out,
        }),
        Command::Simulate {
            config,
            checkpoint,
            n,
            seed,
            out,
        } => commands::cmd_simulate(SimulateArgs {
            common: CommonArgs {
                config_path: config,
                seed,
                out,
            },
            checkpoint,
            replications: n,
        }),
        Command::Exact { config, cap, out } => commands::cmd_exact(ExactArgs {
            common: CommonArgs {
                config_path: config,
                seed: None,
                out,
            },
            cap,
        }),
        Command::Verify {
            config,
            checkpoint,
            exact,
            out,
        } => commands::cmd_verify(VerifyArgs {
            common: CommonArgs {
                config_path: config,
                seed: None,
                out,
            },
            checkpoint,
            exact,
        }),
    };
    ExitCode::from(code)
}
