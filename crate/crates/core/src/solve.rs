//! Depth-first backtracking with forward checking, streaming solution
//! enumeration, and an exact branch-and-bound oracle.
//!
//! A search node is one value-binding attempt, counted whether or not the
//! propagation survives. The same accounting applies to every ordering so
//! node counts are comparable across heuristics.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use crate::fileio::FormatError;
use crate::heuristics::{MinCostValues, MinDom, ValueOrdering, VarOrdering};
use crate::instance::{Assignment, CopInstance};
use crate::state::{Propagation, SearchState};

/// One recorded solution: the assignment, its objective, and the node/time
/// counters at the moment of discovery.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionRecord {
    pub assignment: Assignment,
    pub objective: f64,
    pub nodes: u64,
    pub millis: u64,
}

/// Everything a solve run produced, in discovery order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveReport {
    pub solutions: Vec<SolutionRecord>,
    pub total_nodes: u64,
    pub cutoff_hit: bool,
}

impl SolveReport {
    pub fn first(&self) -> Option<&SolutionRecord> {
        self.solutions.first()
    }

    /// Best objective among the first `k` solutions.
    pub fn best_of_first(&self, k: usize) -> Option<f64> {
        self.solutions.iter().take(k).map(|s| s.objective).fold(None, |acc, o| {
            Some(match acc {
                Some(a) if a <= o => a,
                _ => o,
            })
        })
    }

    pub fn best_objective(&self) -> Option<f64> {
        self.best_of_first(self.solutions.len())
    }

    /// Writes the report in its line-oriented text form.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FormatError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "solvereport 1")?;
        for (i, s) in self.solutions.iter().enumerate() {
            writeln!(w, "sol {} {} {} {}", i, s.objective, s.nodes, s.millis)?;
        }
        writeln!(w, "total {} {}", self.total_nodes, u8::from(self.cutoff_hit))?;
        w.flush()?;
        Ok(())
    }

    /// Reads a report written by [`SolveReport::save`]. Assignments are not
    /// serialized; loaded records carry empty assignments.
    pub fn load(path: impl AsRef<Path>) -> Result<SolveReport, FormatError> {
        let parse = |line: usize, msg: &str| FormatError::Parse { line, msg: msg.into() };
        let reader = BufReader::new(File::open(path)?);
        let mut report = SolveReport::default();
        let mut saw_total = false;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["solvereport", "1"] if idx == 0 => {}
                ["sol", i, obj, nodes, millis] => {
                    if i.parse::<usize>().ok() != Some(report.solutions.len()) {
                        return Err(parse(idx + 1, "solution index out of order"));
                    }
                    report.solutions.push(SolutionRecord {
                        assignment: Assignment::new(0),
                        objective: obj.parse().map_err(|_| parse(idx + 1, "bad objective"))?,
                        nodes: nodes.parse().map_err(|_| parse(idx + 1, "bad node count"))?,
                        millis: millis.parse().map_err(|_| parse(idx + 1, "bad millis"))?,
                    });
                }
                ["total", nodes, cutoff] => {
                    report.total_nodes =
                        nodes.parse().map_err(|_| parse(idx + 1, "bad total"))?;
                    report.cutoff_hit = *cutoff == "1";
                    saw_total = true;
                }
                _ => return Err(parse(idx + 1, "unrecognized record")),
            }
        }
        if !saw_total {
            return Err(parse(0, "missing total record"));
        }
        Ok(report)
    }
}

struct Dfs<'a, 'o> {
    state: SearchState<'a>,
    var_ordering: &'o mut dyn VarOrdering,
    value_ordering: &'o dyn ValueOrdering,
    node_cutoff: u64,
    max_solutions: u64,
    nodes: u64,
    started: Instant,
    report: SolveReport,
}

enum Flow {
    Continue,
    Stop,
}

impl<'a, 'o> Dfs<'a, 'o> {
    fn record_solution(&mut self) {
        self.report.solutions.push(SolutionRecord {
            assignment: self.state.assignment(),
            objective: self.state.partial_cost(),
            nodes: self.nodes,
            millis: self.started.elapsed().as_millis() as u64,
        });
    }

    fn run(&mut self) -> Flow {
        if self.state.all_bound() {
            self.record_solution();
            return if self.report.solutions.len() as u64 >= self.max_solutions {
                Flow::Stop
            } else {
                Flow::Continue
            };
        }
        let var = match self.var_ordering.select_var(&self.state) {
            Ok(v) => v,
            Err(_) => return Flow::Continue,
        };
        for value in self.value_ordering.order_values(&self.state, var) {
            if self.nodes >= self.node_cutoff {
                self.report.cutoff_hit = true;
                return Flow::Stop;
            }
            self.nodes += 1;
            let before = self.state.domain_product();
            let outcome = self.state.propagate(var, value);
            let after = match outcome {
                Propagation::Consistent => self.state.domain_product(),
                Propagation::Wipeout => 0.0,
            };
            self.var_ordering.observe(var, value, before, after);
            if outcome == Propagation::Consistent {
                if let Flow::Stop = self.run() {
                    self.state.undo();
                    return Flow::Stop;
                }
            }
            self.state.undo();
        }
        Flow::Continue
    }
}

/// Enumerates feasible solutions depth-first until `max_solutions` are found,
/// the search space is exhausted, or `node_cutoff` binding attempts have been
/// spent.
pub fn backtrack_solve(
    instance: &CopInstance,
    var_ordering: &mut dyn VarOrdering,
    value_ordering: &dyn ValueOrdering,
    node_cutoff: u64,
    max_solutions: u64,
) -> SolveReport {
    assert!(node_cutoff >= 1 && max_solutions >= 1);
    let mut dfs = Dfs {
        state: SearchState::new(instance),
        var_ordering,
        value_ordering,
        node_cutoff,
        max_solutions,
        nodes: 0,
        started: Instant::now(),
        report: SolveReport::default(),
    };
    dfs.run();
    let mut report = dfs.report;
    report.total_nodes = dfs.nodes;
    report
}

/// Result of the exact oracle.
#[derive(Debug, Clone, PartialEq)]
pub enum ExactOutcome {
    Optimal { objective: f64, assignment: Assignment, nodes: u64 },
    Unsat { nodes: u64 },
    CutoffUnknown { nodes: u64 },
}

impl ExactOutcome {
    pub fn objective(&self) -> Option<f64> {
        match self {
            ExactOutcome::Optimal { objective, .. } => Some(*objective),
            _ => None,
        }
    }
}

struct BranchAndBound<'a> {
    state: SearchState<'a>,
    node_cutoff: u64,
    nodes: u64,
    incumbent: Option<(f64, Assignment)>,
    ordering: MinDom,
}

impl<'a> BranchAndBound<'a> {
    fn bound(&self) -> f64 {
        self.incumbent.as_ref().map_or(f64::INFINITY, |(obj, _)| *obj)
    }

    fn run(&mut self) -> Flow {
        if self.state.all_bound() {
            if self.state.partial_cost() < self.bound() {
                self.incumbent = Some((self.state.partial_cost(), self.state.assignment()));
            }
            return Flow::Continue;
        }
        let var = match self.ordering.select_var(&self.state) {
            Ok(v) => v,
            Err(_) => return Flow::Continue,
        };
        for value in MinCostValues.order_values(&self.state, var) {
            if self.nodes >= self.node_cutoff {
                return Flow::Stop;
            }
            self.nodes += 1;
            let outcome = self.state.propagate(var, value);
            // Weights are non-negative, so the running cost lower-bounds every
            // completion of this branch.
            if outcome == Propagation::Consistent && self.state.partial_cost() < self.bound() {
                if let Flow::Stop = self.run() {
                    self.state.undo();
                    return Flow::Stop;
                }
            }
            self.state.undo();
        }
        Flow::Continue
    }
}

/// Depth-first branch and bound; returns a provably optimal solution when the
/// search completes within the node budget.
pub fn exact_optimum(instance: &CopInstance, node_cutoff: u64) -> ExactOutcome {
    let mut bnb = BranchAndBound {
        state: SearchState::new(instance),
        node_cutoff,
        nodes: 0,
        incumbent: None,
        ordering: MinDom,
    };
    match bnb.run() {
        Flow::Stop => ExactOutcome::CutoffUnknown { nodes: bnb.nodes },
        Flow::Continue => match bnb.incumbent {
            Some((objective, assignment)) => {
                ExactOutcome::Optimal { objective, assignment, nodes: bnb.nodes }
            }
            None => ExactOutcome::Unsat { nodes: bnb.nodes },
        },
    }
}

/// Relative excess of `cost` over `optimal` in percent, with the denominator
/// guarded at 1 so zero optima stay well-defined.
pub fn gap(cost: f64, optimal: f64) -> f64 {
    100.0 * (cost - optimal) / optimal.max(1.0)
}
