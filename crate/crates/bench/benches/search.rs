use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use copsolve_bench::instance;
use copsolve_core::heuristics::{DomTdeg, MinCostValues, MinDom};
use copsolve_core::solve::{backtrack_solve, exact_optimum};
use copsolve_core::state::SearchState;

fn bench_propagate(c: &mut Criterion) {
    let inst = instance(20, 5, 3);
    c.bench_function("propagate n=20", |b| {
        let mut state = SearchState::new(&inst);
        b.iter(|| {
            let var = state.unbound_vars().next().unwrap();
            let value = state.domain_values(var).next().unwrap();
            black_box(state.propagate(var, value));
            state.undo();
        })
    });
}

fn bench_first_solution(c: &mut Criterion) {
    let mut group = c.benchmark_group("first solution n=15");
    for (name, seed) in [("a", 4u64), ("b", 11u64)] {
        let inst = instance(15, 0, seed);
        group.bench_function(format!("mindom/{name}"), |b| {
            b.iter(|| black_box(backtrack_solve(&inst, &mut MinDom, &MinCostValues, 500_000, 1)))
        });
        group.bench_function(format!("domtdeg/{name}"), |b| {
            b.iter(|| black_box(backtrack_solve(&inst, &mut DomTdeg, &MinCostValues, 500_000, 1)))
        });
    }
    group.finish();
}

fn bench_oracle(c: &mut Criterion) {
    let inst = instance(10, 5, 7);
    c.bench_function("exact optimum n=10", |b| {
        b.iter(|| black_box(exact_optimum(&inst, u64::MAX)))
    });
}

criterion_group!(benches, bench_propagate, bench_first_solution, bench_oracle);
criterion_main!(benches);
