//! Finite-difference check of the weight-to-welfare direction: raising the
//! weight of the lowest-utility group at a settled profile must not
//! decrease welfare (Theorem-2 direction). Under discrete accept/reject
//! dynamics most paired runs are bit-identical, so a large share of the
//! differences is exactly zero.

use c3sim::analysis::{run_theorem2_check, Theorem2Config};

fn main() -> c3sim::Result<()> {
    let config = Theorem2Config::default();
    let report = run_theorem2_check(&config)?;

    println!("seed  group  baseline W  perturbed W  delta");
    for e in &report.entries {
        println!(
            "{:>4}  {:>5}  {:>10.6}  {:>11.6}  {:+.2e}",
            e.seed, e.group, e.welfare_baseline, e.welfare_perturbed, e.delta_w
        );
    }
    println!();
    let zeros = report.entries.iter().filter(|e| e.delta_w == 0.0).count();
    println!("fraction with delta >= 0: {:.2} ({zeros} exactly zero)", report.nonneg_fraction);
    println!("mean delta:               {:+.3e}", report.mean_delta_w);
    println!("note: {}", report.note);
    Ok(())
}
