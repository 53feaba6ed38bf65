use std::path::PathBuf;

use copsolve_core::heuristics::MinCostValues;
use copsolve_core::solve::backtrack_solve;

use crate::{CliError, CliResult, Heuristic};

pub struct Args {
    pub instance: PathBuf,
    pub var_heur: Heuristic,
    pub weights: Option<PathBuf>,
    pub cutoff: u64,
    pub k: u64,
    pub out: Option<PathBuf>,
}

pub fn run(args: Args) -> CliResult<()> {
    if args.cutoff == 0 || args.k == 0 {
        return Err(CliError::Config(anyhow::anyhow!("--cutoff and --k must be >= 1")));
    }
    let instance = copsolve_core::fileio::load_instance(&args.instance)
        .map_err(|err| CliError::Config(anyhow::anyhow!("{}: {err}", args.instance.display())))?;
    let weights = match &args.weights {
        Some(path) => Some(super::load_weights(path)?),
        None => None,
    };
    let mut ordering = super::make_ordering(args.var_heur, &instance, weights.as_ref())?;
    let report = backtrack_solve(&instance, ordering.as_mut(), &MinCostValues, args.cutoff, args.k);

    println!(
        "{}: method={} solutions={} nodes={} cutoff_hit={}",
        args.instance.display(),
        super::heuristic_name(args.var_heur),
        report.solutions.len(),
        report.total_nodes,
        report.cutoff_hit
    );
    for (i, s) in report.solutions.iter().enumerate() {
        println!("  sol {i}: objective={} nodes={} millis={}", s.objective, s.nodes, s.millis);
    }
    if let Some(out) = &args.out {
        report.save(out).map_err(|err| anyhow::anyhow!("{}: {err}", out.display()))?;
    }
    Ok(())
}
