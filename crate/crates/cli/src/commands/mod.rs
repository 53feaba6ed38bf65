pub mod bench;
pub mod generate;
pub mod solve;
pub mod topk;
pub mod train;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use copsolve_core::heuristics::{DomDdeg, DomTdeg, Impact, MaxRegret, MinDom, VarOrdering};
use copsolve_core::nn::{load_params, NeuralOrdering, ScorerParams};
use copsolve_core::CopInstance;

use crate::{config_err, CliError, CliResult, Heuristic};

/// All `.cop` files in a directory, sorted by file name so every run sees the
/// same order.
pub fn list_instances(dir: &Path) -> CliResult<Vec<PathBuf>> {
    if !dir.is_dir() {
        return config_err(anyhow::anyhow!("{} is not a directory", dir.display()));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "cop"))
        .collect();
    files.sort();
    if files.is_empty() {
        return config_err(anyhow::anyhow!("no .cop instances under {}", dir.display()));
    }
    Ok(files)
}

pub fn load_instances(dir: &Path) -> CliResult<Vec<(PathBuf, Arc<CopInstance>)>> {
    list_instances(dir)?
        .into_iter()
        .map(|path| {
            let inst = copsolve_core::fileio::load_instance(&path)
                .map_err(|err| CliError::Config(anyhow::anyhow!("{}: {err}", path.display())))?;
            Ok((path, Arc::new(inst)))
        })
        .collect()
}

pub fn load_weights(path: &Path) -> CliResult<Arc<ScorerParams>> {
    load_params(path)
        .map(Arc::new)
        .map_err(|err| CliError::Config(anyhow::anyhow!("{}: {err}", path.display())))
}

pub fn heuristic_name(h: Heuristic) -> &'static str {
    match h {
        Heuristic::Mindom => "mindom",
        Heuristic::Domddeg => "domddeg",
        Heuristic::Domtdeg => "domtdeg",
        Heuristic::Impact => "impact",
        Heuristic::Greedy => "greedy",
        Heuristic::Neural => "neural",
    }
}

/// Builds a fresh ordering for one solve run. Impact statistics and the
/// neural topology cache are per-run state, so benchmarks construct one
/// ordering per (instance, method) pair.
pub fn make_ordering(
    h: Heuristic,
    instance: &CopInstance,
    weights: Option<&Arc<ScorerParams>>,
) -> CliResult<Box<dyn VarOrdering>> {
    Ok(match h {
        Heuristic::Mindom => Box::new(MinDom),
        Heuristic::Domddeg => Box::new(DomDdeg),
        Heuristic::Domtdeg => Box::new(DomTdeg),
        Heuristic::Impact => Box::new(Impact::new()),
        Heuristic::Greedy => Box::new(MaxRegret),
        Heuristic::Neural => {
            let params = weights.ok_or_else(|| {
                CliError::Config(anyhow::anyhow!("--var-heur neural requires --weights"))
            })?;
            Box::new(NeuralOrdering::new(instance, Arc::clone(params)))
        }
    })
}

/// Shortest-form float used across CSV output: integers print without a
/// fractional part.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
