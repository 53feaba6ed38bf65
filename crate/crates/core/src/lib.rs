//! Constraint-optimization toolkit: weighted table-constraint instances,
//! RB-model generation, a forward-checking backtracking solver with pluggable
//! variable ordering, a from-scratch graph message-passing Q-scorer, and a
//! tree-search training loop that turns the scorer into a branching heuristic.

pub mod fileio;
pub mod heuristics;
pub mod instance;
pub mod mcts;
pub mod nn;
pub mod rb;
pub mod solve;
pub mod state;
pub mod trainer;

pub use instance::{
    evaluate_objective, Assignment, ConstraintFunction, CopInstance, InstanceError, Objective,
    Value,
};
pub use rb::{rb_generate, GenError, RbParams};
pub use solve::{backtrack_solve, exact_optimum, gap, ExactOutcome, SolutionRecord, SolveReport};
pub use state::{Propagation, SearchState};
