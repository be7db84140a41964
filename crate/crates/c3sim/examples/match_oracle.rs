//! Cross-checks the closed-form top-K softmax matching against a
//! brute-force oracle and against Monte-Carlo sampling frequencies.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use c3sim::analysis::{brute_force_oracles, oracle_match_distribution};
use c3sim::env::failure_example_env;
use c3sim::game::{baseline_adjustments, match_distribution, MatchingParams};

fn main() -> c3sim::Result<()> {
    let env = failure_example_env(3);
    let adjustments = baseline_adjustments(env.matching, env.population.len());
    let report = brute_force_oracles(&env, &adjustments)?;
    println!(
        "analytic vs brute force on {} quantities: max |deviation| = {:.3e}",
        report.comparisons, report.max_abs_deviation
    );

    // Monte-Carlo check on one user's distribution.
    let scores: Vec<f64> = env
        .creators
        .iter()
        .map(|c| c3sim::game::relevance(&env.relevance, &c.strategy, &env.population.embeddings[0]))
        .collect::<c3sim::Result<_>>()?;
    let params = MatchingParams { k: 3, beta: 0.7 };
    let p = match_distribution(&scores, &params)?;
    let oracle = oracle_match_distribution(&scores, params.k, params.beta);

    let samples = 1_000_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut counts = vec![0usize; scores.len()];
    for _ in 0..samples {
        let mut target: f64 = rng.gen();
        for (i, &pi) in p.iter().enumerate() {
            target -= pi;
            if target <= 0.0 {
                counts[i] += 1;
                break;
            }
        }
    }
    println!("creator  analytic  oracle    sampled");
    for i in 0..scores.len() {
        println!(
            "{i:>7}  {:.5}   {:.5}   {:.5}",
            p[i],
            oracle[i],
            counts[i] as f64 / samples as f64
        );
    }
    Ok(())
}
