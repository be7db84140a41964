//! The welfare-monotonicity condition: verified to fail for a dot-product
//! relevance on the orthogonal-basis environment and to hold for a bounded
//! quadratic relevance, via the eigenvalue check.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use c3sim::analysis::{check_monotone_condition, BoundedQuadratic, Verdict};
use c3sim::env::orthogonal_basis_env;
use c3sim::game::UserPopulation;

fn main() -> c3sim::Result<()> {
    let env = orthogonal_basis_env(0, 10);
    let points: Vec<Vec<f64>> = env.creators.iter().map(|c| c.strategy.clone()).collect();
    let report = check_monotone_condition(&env.relevance, &env.population, &points, 1e-9);
    let worst = report
        .points
        .iter()
        .filter_map(|p| p.max_eigenvalue)
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "dot-product relevance on the orthogonal basis: {:?} (max eigenvalue {:.4})",
        report.verdict, worst
    );
    assert_eq!(report.verdict, Verdict::Fails);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let users: Vec<Vec<f64>> = (0..50)
        .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let population = UserPopulation::uniform(users)?;
    // The condition holds as long as E[(x - s)(x - s)^T] stays below the
    // identity, so the candidate points must stay near the population mean.
    let points: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..3).map(|_| rng.gen_range(-0.4..0.4)).collect())
        .collect();
    let model = BoundedQuadratic { c: 4.0 };
    let report = check_monotone_condition(&model, &population, &points, 1e-9);
    let worst = report
        .points
        .iter()
        .filter_map(|p| p.max_eigenvalue)
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "bounded quadratic relevance: {:?} (max eigenvalue {:.4})",
        report.verdict, worst
    );
    assert_eq!(report.verdict, Verdict::Holds);
    Ok(())
}
