use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use copsolve_core::heuristics::MinCostValues;
use copsolve_core::nn::NeuralOrdering;
use copsolve_core::solve::{backtrack_solve, exact_optimum, gap, ExactOutcome};
use rayon::prelude::*;

use crate::{CliError, CliResult};

pub struct Args {
    pub instances: PathBuf,
    pub weights: PathBuf,
    pub k: Vec<u64>,
    pub cutoff: u64,
    pub oracle_cutoff: u64,
    pub threads: usize,
    pub out: PathBuf,
}

/// Per-instance gaps of the best objective among the first k solutions.
struct InstanceGaps {
    vars: usize,
    /// `Some(gaps)` when the oracle proved an optimum and at least one
    /// solution was found; index-aligned with the k list.
    gaps: Option<Vec<f64>>,
}

pub fn run(args: Args) -> CliResult<()> {
    if args.k.is_empty() || args.k.contains(&0) {
        return Err(CliError::Config(anyhow::anyhow!("--k values must be >= 1")));
    }
    let mut ks = args.k.clone();
    ks.sort_unstable();
    ks.dedup();
    let weights = super::load_weights(&args.weights)?;
    let instances = super::load_instances(&args.instances)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .context("building worker pool")?;

    let k_max = *ks.last().unwrap();
    let rows: Vec<InstanceGaps> = pool.install(|| {
        instances
            .par_iter()
            .map(|(_, instance)| {
                let optimal = match exact_optimum(instance, args.oracle_cutoff) {
                    ExactOutcome::Optimal { objective, .. } => Some(objective),
                    _ => None,
                };
                let mut ordering = NeuralOrdering::new(instance, Arc::clone(&weights));
                let report =
                    backtrack_solve(instance, &mut ordering, &MinCostValues, args.cutoff, k_max);
                let gaps = optimal.and_then(|opt| {
                    report.first()?;
                    Some(
                        ks.iter()
                            .map(|&k| gap(report.best_of_first(k as usize).unwrap(), opt))
                            .collect(),
                    )
                });
                InstanceGaps { vars: instance.num_variables(), gaps }
            })
            .collect()
    });

    // Average per (n, k) cell over measurable instances.
    let mut cells: BTreeMap<usize, (Vec<f64>, usize, usize)> = BTreeMap::new();
    for row in &rows {
        let entry = cells.entry(row.vars).or_insert_with(|| (vec![0.0; ks.len()], 0, 0));
        match &row.gaps {
            Some(gaps) => {
                for (acc, g) in entry.0.iter_mut().zip(gaps) {
                    *acc += g;
                }
                entry.1 += 1;
            }
            None => entry.2 += 1,
        }
    }

    let mut w = BufWriter::new(
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?,
    );
    writeln!(w, "n,k,avg_gap_percent,instances,excluded").context("writing table")?;
    println!("n k avg_gap% instances excluded");
    for (n, (sums, counted, excluded)) in &cells {
        for (i, &k) in ks.iter().enumerate() {
            let avg = if *counted > 0 {
                format!("{:.2}", sums[i] / *counted as f64)
            } else {
                String::new()
            };
            writeln!(w, "{n},{k},{avg},{counted},{excluded}").context("writing table")?;
            println!("{n} {k} {} {counted} {excluded}", if avg.is_empty() { "-" } else { &avg });
        }
    }
    w.flush().context("writing table")?;
    Ok(())
}
