//! Sweeps all four mechanism arms (baseline, UIR, SMT, HMT) over a few
//! seeds of the counterexample environment and prints a summary table.

use c3sim::config::{DynamicsSection, EnvSelector, ReweightSection, RunConfig};
use c3sim::intervention::MechanismKind;
use c3sim::runner::run_experiment;

fn main() -> c3sim::Result<()> {
    let dir = std::env::temp_dir().join("c3sim-mechanism-sweep");
    let config = RunConfig {
        environment: EnvSelector::FailureExample,
        dynamics: DynamicsSection { rounds: 500, ..Default::default() },
        reweighting: ReweightSection { epochs: 100, epoch_len: 5, ..Default::default() },
        seeds: vec![0, 1, 2, 3, 4],
        output_dir: dir.clone(),
    };
    let arms = [
        MechanismKind::None,
        MechanismKind::Uir,
        MechanismKind::Smt,
        MechanismKind::Hmt,
    ];
    let summary = run_experiment(&config, &arms)?;

    println!("arm   mean final welfare");
    for arm in &summary.arms {
        println!("{:<5} {:.4}", arm.arm, arm.mean_final_welfare.unwrap());
    }
    println!();
    println!("traces, metrics, and welfare curves written to {}", dir.display());
    Ok(())
}
