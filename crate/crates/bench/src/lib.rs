//! Shared fixtures for the criterion benchmarks.

use copsolve_core::rb::{rb_generate, RbParams};
use copsolve_core::CopInstance;

/// A reference-distribution instance, deterministic in the seed.
pub fn instance(vars: usize, delta: u32, seed: u64) -> CopInstance {
    rb_generate(&RbParams {
        arity: 2,
        num_variables: vars,
        domain_exponent: 0.7,
        density: 3.0,
        tightness: 0.21,
        weight_range: delta,
        seed,
    })
    .expect("valid reference parameters")
}
