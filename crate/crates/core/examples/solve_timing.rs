//! Prints exact-solver row counts and timings for `k` over a range of `n`.
//!
//! `cargo run --release --example solve_timing -- 4 6 12`
use ptomo_core::hashfam::{solve_cover_budgeted, Budget, SolveMode, DEFAULT_NODE_BUDGET};
use std::time::Instant;

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let (k, lo, hi) = (args[0], args[1], args[2]);
    for n in lo..=hi {
        let t = Instant::now();
        let budget = Budget::new(DEFAULT_NODE_BUDGET);
        let report = solve_cover_budgeted(n, k, SolveMode::Exact, &budget).unwrap();
        println!(
            "n={n} k={k} rows={} lower_bound={} proven={} nodes={} {:.1}s",
            report.family.len(),
            report.lower_bound,
            report.proven_minimal,
            DEFAULT_NODE_BUDGET - budget.remaining(),
            t.elapsed().as_secs_f64()
        );
    }
}
