//! The five-user counterexample: under plain better-response dynamics all
//! creators crowd around the central users, leaving the two peripheral
//! users with low expected utility even though serving them is feasible.

use c3sim::dynamics::{run_lbr, LbrConfig, TraceOptions};
use c3sim::env::failure_example_env;
use c3sim::game::baseline_adjustments;

fn main() -> c3sim::Result<()> {
    let seed = 7;
    let env = failure_example_env(seed);
    let config = LbrConfig { rng_seed: seed, rounds: 2000, eta: 0.05, ..Default::default() };
    let adjustments = baseline_adjustments(env.matching, env.population.len());
    let trace = run_lbr(&env, adjustments, &[1.0; 5], &config, &TraceOptions::default())?;

    let first = trace.records.first().unwrap();
    let last = trace.records.last().unwrap();
    println!("welfare: {:.4} (round 0) -> {:.4} (round {})", first.welfare, last.welfare, last.step);
    println!("per-user expected utility at the end (max attainable 2.0):");
    for (j, u) in last.group_utilities.iter().enumerate() {
        println!("  x{}: {:.4}", j + 1, u);
    }
    println!("final strategies:");
    for (i, s) in trace.final_strategies.iter().enumerate() {
        println!("  creator {i}: [{:.3}, {:.3}]", s[0], s[1]);
    }
    Ok(())
}
