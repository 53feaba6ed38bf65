//! `copsolve`: generate instances, train the scorer, solve, and benchmark.
//!
//! Exit codes: 0 on success, 2 on configuration errors (bad flags, missing
//! inputs), 3 on runtime failures.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "copsolve", version, about = "Constraint-optimization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum Heuristic {
    Mindom,
    Domddeg,
    Domtdeg,
    Impact,
    Greedy,
    Neural,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum Playout {
    Guided,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random instances from the phase-transition model.
    Generate {
        /// Output directory for `.cop` files.
        #[arg(long)]
        out_dir: PathBuf,
        /// How many instances; seeds run seed..seed+count.
        #[arg(long)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        arity: usize,
        #[arg(long, default_value_t = 15)]
        vars: usize,
        /// Domain-size exponent: d = round(vars^gamma).
        #[arg(long, default_value_t = 0.7)]
        gamma: f64,
        /// Constraint density: e = round(beta * n * ln n).
        #[arg(long, default_value_t = 3.0)]
        beta: f64,
        /// Fraction of forbidden tuples per constraint.
        #[arg(long, default_value_t = 0.21)]
        rho: f64,
        /// Inclusive integer weight range; 0 generates a pure CSP.
        #[arg(long, default_value_t = 5)]
        delta: u32,
        /// Rescale weights into [0, 1] after generation.
        #[arg(long)]
        normalize: bool,
    },
    /// Train the scorer over a directory of instances.
    Train {
        #[arg(long)]
        instances: PathBuf,
        /// Output weights file.
        #[arg(long)]
        out: PathBuf,
        /// Training-log CSV (instance, iteration, loss, incumbent, buffer).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        t_max: u64,
        #[arg(long, default_value_t = 10)]
        n_sim: u32,
        #[arg(long, default_value_t = 100_000)]
        buffer: usize,
        #[arg(long, default_value_t = 128)]
        batch: u32,
        #[arg(long, default_value_t = 1.0)]
        c1: f64,
        #[arg(long, default_value_t = 1.0)]
        c3: f64,
        #[arg(long, default_value_t = 1.0)]
        c4: f64,
        #[arg(long, default_value_t = 0.1)]
        alpha_step: f64,
        /// Target-network sync period in gradient steps.
        #[arg(long, default_value_t = 10)]
        sync_every: u64,
        /// Skip the per-instance target sync.
        #[arg(long)]
        no_instance_sync: bool,
        /// Skip the periodic target sync.
        #[arg(long)]
        no_periodic_sync: bool,
        #[arg(long, default_value_t = 5e-5)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        embed_dim: usize,
        #[arg(long, default_value_t = 5)]
        rounds: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        /// Write checkpoint weight files every this many gradient steps.
        #[arg(long)]
        checkpoint_every: Option<u64>,
        /// Directory for checkpoint files (defaults next to --out).
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Warm-start from an existing weights file.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write per-instance final tree statistics into this directory.
        #[arg(long)]
        dump_trees: Option<PathBuf>,
        /// Playout variable policy during tree search.
        #[arg(long, value_enum, default_value_t = Playout::Guided)]
        playout: Playout,
    },
    /// Solve one instance, streaming solutions in discovery order.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = Heuristic::Domtdeg)]
        var_heur: Heuristic,
        /// Weights file (required for --var-heur neural).
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 500_000)]
        cutoff: u64,
        /// Stop after this many solutions.
        #[arg(long, default_value_t = 1)]
        k: u64,
        /// Report file to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several heuristics over an instance directory and tabulate.
    Bench {
        #[arg(long)]
        instances: PathBuf,
        /// Comma-separated heuristics, e.g. mindom,domtdeg,neural.
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<Heuristic>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 500_000)]
        cutoff: u64,
        #[arg(long, default_value_t = 1)]
        k: u64,
        /// Node budget for the exact oracle that grounds gaps.
        #[arg(long, default_value_t = 5_000_000)]
        oracle_cutoff: u64,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Records CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Summary CSV path.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Write 0 in the millis column for byte-reproducible output.
        #[arg(long)]
        no_timing: bool,
    },
    /// Best-of-first-k objective gaps for the neural heuristic.
    Topk {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Solution-count prefixes to evaluate.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1u64, 5, 10, 20])]
        k: Vec<u64>,
        #[arg(long, default_value_t = 500_000)]
        cutoff: u64,
        #[arg(long, default_value_t = 5_000_000)]
        oracle_cutoff: u64,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failures split by whose fault they are: bad invocations exit 2, broken
/// runs exit 3.
pub enum CliError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config_err<T>(err: impl Into<anyhow::Error>) -> CliResult<T> {
    Err(CliError::Config(err.into()))
}

impl From<anyhow::Error> for CliError {
    fn from(err: anyhow::Error) -> Self {
        CliError::Runtime(err)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { out_dir, count, seed, arity, vars, gamma, beta, rho, delta, normalize } => {
            commands::generate::run(commands::generate::Args {
                out_dir,
                count,
                seed,
                arity,
                vars,
                gamma,
                beta,
                rho,
                delta,
                normalize,
            })
        }
        Command::Train {
            instances,
            out,
            log,
            t_max,
            n_sim,
            buffer,
            batch,
            c1,
            c3,
            c4,
            alpha_step,
            sync_every,
            no_instance_sync,
            no_periodic_sync,
            lr,
            seed,
            embed_dim,
            rounds,
            hidden,
            checkpoint_every,
            checkpoint_dir,
            resume,
            dump_trees,
            playout,
        } => commands::train::run(commands::train::Args {
            instances,
            out,
            log,
            t_max,
            n_sim,
            buffer,
            batch: batch as usize,
            c1,
            c3,
            c4,
            alpha_step,
            sync_every,
            no_instance_sync,
            no_periodic_sync,
            lr,
            seed,
            embed_dim,
            rounds,
            hidden,
            checkpoint_every,
            checkpoint_dir,
            resume,
            dump_trees,
            playout,
        }),
        Command::Solve { instance, var_heur, weights, cutoff, k, out } => {
            commands::solve::run(commands::solve::Args { instance, var_heur, weights, cutoff, k, out })
        }
        Command::Bench {
            instances,
            methods,
            weights,
            cutoff,
            k,
            oracle_cutoff,
            threads,
            out,
            summary,
            no_timing,
        } => commands::bench::run(commands::bench::Args {
            instances,
            methods,
            weights,
            cutoff,
            k,
            oracle_cutoff,
            threads,
            out,
            summary,
            no_timing,
        }),
        Command::Topk { instances, weights, k, cutoff, oracle_cutoff, threads, out } => {
            commands::topk::run(commands::topk::Args {
                instances,
                weights,
                k,
                cutoff,
                oracle_cutoff,
                threads,
                out,
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(3)
        }
    }
}
