use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use copsolve_core::heuristics::MinCostValues;
use copsolve_core::nn::ScorerParams;
use copsolve_core::solve::{backtrack_solve, exact_optimum, gap, ExactOutcome};
use copsolve_core::CopInstance;
use rayon::prelude::*;

use crate::{CliError, CliResult, Heuristic};

pub struct Args {
    pub instances: PathBuf,
    pub methods: Vec<Heuristic>,
    pub weights: Option<PathBuf>,
    pub cutoff: u64,
    pub k: u64,
    pub oracle_cutoff: u64,
    pub threads: usize,
    pub out: PathBuf,
    pub summary: Option<PathBuf>,
    pub no_timing: bool,
}

/// One (instance, method) measurement row.
pub struct BenchRecord {
    pub instance: String,
    pub method: &'static str,
    pub nodes_first: Option<u64>,
    pub nodes_total: u64,
    pub best_objective: Option<f64>,
    pub optimal: Option<f64>,
    pub gap_percent: Option<f64>,
    pub millis: u64,
    pub cutoff_hit: bool,
}

pub struct MethodSummary {
    pub method: &'static str,
    pub solved: usize,
    pub mean_nodes_first: Option<f64>,
    pub reduction_percent: Option<f64>,
    pub cutoffs: usize,
    pub mean_gap_percent: Option<f64>,
}

pub fn run(args: Args) -> CliResult<()> {
    if args.methods.contains(&Heuristic::Neural) && args.weights.is_none() {
        return Err(CliError::Config(anyhow::anyhow!("neural method requires --weights")));
    }
    let weights = match &args.weights {
        Some(path) => Some(super::load_weights(path)?),
        None => None,
    };
    let instances = super::load_instances(&args.instances)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .context("building worker pool")?;

    let tasks: Vec<(String, Arc<CopInstance>)> = instances
        .iter()
        .map(|(path, inst)| {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            (name, Arc::clone(inst))
        })
        .collect();

    let methods = args.methods.clone();
    let results: Vec<CliResult<Vec<BenchRecord>>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(name, instance)| {
                bench_instance(
                    name,
                    instance,
                    &methods,
                    weights.as_ref(),
                    args.cutoff,
                    args.k,
                    args.oracle_cutoff,
                    args.no_timing,
                )
            })
            .collect()
    });
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    // Workers return in instance order already; keep (instance, method-order)
    // pairing stable regardless of scheduling.
    let method_rank = |m: &str| methods.iter().position(|&h| super::heuristic_name(h) == m);
    records.sort_by(|a, b| {
        a.instance.cmp(&b.instance).then(method_rank(a.method).cmp(&method_rank(b.method)))
    });

    write_records(&records, &args.out)?;
    let summaries = summarize(&methods, &records);
    print_summary(&summaries);
    if let Some(path) = &args.summary {
        write_summary(&summaries, path)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench_instance(
    name: &str,
    instance: &Arc<CopInstance>,
    methods: &[Heuristic],
    weights: Option<&Arc<ScorerParams>>,
    cutoff: u64,
    k: u64,
    oracle_cutoff: u64,
    no_timing: bool,
) -> CliResult<Vec<BenchRecord>> {
    let optimal = match exact_optimum(instance, oracle_cutoff) {
        ExactOutcome::Optimal { objective, .. } => Some(objective),
        ExactOutcome::Unsat { .. } | ExactOutcome::CutoffUnknown { .. } => None,
    };
    let mut rows = Vec::with_capacity(methods.len());
    for &method in methods {
        let mut ordering = super::make_ordering(method, instance, weights)?;
        let started = Instant::now();
        let report = backtrack_solve(instance, ordering.as_mut(), &MinCostValues, cutoff, k);
        let millis = if no_timing { 0 } else { started.elapsed().as_millis() as u64 };
        let best = report.best_objective();
        rows.push(BenchRecord {
            instance: name.to_owned(),
            method: super::heuristic_name(method),
            nodes_first: report.first().map(|s| s.nodes),
            nodes_total: report.total_nodes,
            best_objective: best,
            optimal,
            gap_percent: match (best, optimal) {
                (Some(b), Some(o)) => Some(gap(b, o)),
                _ => None,
            },
            millis,
            cutoff_hit: report.cutoff_hit,
        });
    }
    Ok(rows)
}

fn write_records(records: &[BenchRecord], path: &PathBuf) -> CliResult<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(
        w,
        "instance,method,nodes_first,nodes_total,best_objective,optimal,gap_percent,millis,cutoff_hit"
    )
    .context("writing records")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.instance,
            r.method,
            r.nodes_first.map(|v| v.to_string()).unwrap_or_default(),
            r.nodes_total,
            r.best_objective.map(super::fmt_f64).unwrap_or_default(),
            r.optimal.map(super::fmt_f64).unwrap_or_default(),
            r.gap_percent.map(|g| format!("{g:.2}")).unwrap_or_default(),
            r.millis,
            u8::from(r.cutoff_hit)
        )
        .context("writing records")?;
    }
    w.flush().context("writing records")?;
    Ok(())
}

/// Per-method aggregates. The reduction column reports how far the best
/// method's mean node count undercuts each method's own:
/// `100 * (1 - best_mean / method_mean)`, 0 for the best method itself.
pub fn summarize(methods: &[Heuristic], records: &[BenchRecord]) -> Vec<MethodSummary> {
    let mut summaries: Vec<MethodSummary> = methods
        .iter()
        .map(|&m| {
            let name = super::heuristic_name(m);
            let rows: Vec<&BenchRecord> = records.iter().filter(|r| r.method == name).collect();
            let solved: Vec<u64> = rows.iter().filter_map(|r| r.nodes_first).collect();
            let mean_nodes_first = if solved.is_empty() {
                None
            } else {
                Some(solved.iter().sum::<u64>() as f64 / solved.len() as f64)
            };
            let gaps: Vec<f64> = rows.iter().filter_map(|r| r.gap_percent).collect();
            let mean_gap_percent = if gaps.is_empty() {
                None
            } else {
                Some(gaps.iter().sum::<f64>() / gaps.len() as f64)
            };
            MethodSummary {
                method: name,
                solved: solved.len(),
                mean_nodes_first,
                reduction_percent: None,
                cutoffs: rows.iter().filter(|r| r.cutoff_hit).count(),
                mean_gap_percent,
            }
        })
        .collect();
    let best = summaries
        .iter()
        .filter_map(|s| s.mean_nodes_first)
        .fold(f64::INFINITY, f64::min);
    if best.is_finite() {
        for s in &mut summaries {
            s.reduction_percent = s.mean_nodes_first.map(|m| 100.0 * (1.0 - best / m));
        }
    }
    summaries
}

fn print_summary(summaries: &[MethodSummary]) {
    println!("method solved mean_nodes_first reduction% cutoffs mean_gap%");
    for s in summaries {
        println!(
            "{} {} {} {} {} {}",
            s.method,
            s.solved,
            s.mean_nodes_first.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
            s.reduction_percent.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
            s.cutoffs,
            s.mean_gap_percent.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
        );
    }
}

fn write_summary(summaries: &[MethodSummary], path: &PathBuf) -> CliResult<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "method,solved,mean_nodes_first,reduction_percent,cutoffs,mean_gap_percent")
        .context("writing summary")?;
    for s in summaries {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            s.method,
            s.solved,
            s.mean_nodes_first.map(|v| format!("{v:.4}")).unwrap_or_default(),
            s.reduction_percent.map(|v| format!("{v:.2}")).unwrap_or_default(),
            s.cutoffs,
            s.mean_gap_percent.map(|v| format!("{v:.2}")).unwrap_or_default(),
        )
        .context("writing summary")?;
    }
    w.flush().context("writing summary")?;
    Ok(())
}
