//! Batch experiment orchestration: seeded parallel runs, JSONL trace
//! serialization, summary/manifest emission, and atomic file writes.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{experiment_metrics, MetricsReport};
use crate::config::RunConfig;
use crate::dynamics::{
    run_lbr, AcceptancePoint, LbrConfig, SimulationTrace, TraceOptions, TraceRecord,
    TRACE_SCHEMA_VERSION,
};
use crate::env::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::game::{baseline_adjustments, welfare_deployed, CreatorState};
use crate::intervention::{
    deploy, run_adaptive_reweighting, AlphaSchedule, GroupWeights, MechanismConfig, MechanismKind,
    ReweightConfig,
};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Environment variable overriding the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "C3SIM_OUTPUT_DIR";

/// The configured output directory, unless overridden by
/// [`OUTPUT_DIR_ENV`].
pub fn resolve_output_dir(config: &RunConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => config.output_dir.clone(),
    }
}

/// Writes via a temp file in the target directory followed by a rename, so
/// readers and parallel workers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(parent) = parent {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp.{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Hex SHA-256 of the canonical JSON form of the config.
pub fn config_hash(config: &RunConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    format!("{:x}", hasher.finalize())
}

/// Per-arm RNG stream derived from the master seed and the arm name, so
/// arms are paired per seed without replaying each other's draws.
pub fn derive_arm_seed(master: u64, arm: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(arm.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn arm_name(kind: MechanismKind) -> &'static str {
    match kind {
        MechanismKind::None => "none",
        MechanismKind::Uir => "uir",
        MechanismKind::Smt => "smt",
        MechanismKind::Hmt => "hmt",
    }
}

/// Serializes trace records as JSONL, one record per step.
pub fn write_trace_jsonl(path: &Path, trace: &SimulationTrace) -> Result<()> {
    let mut out = String::new();
    for record in &trace.records {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_trace_jsonl(path: &Path) -> Result<Vec<TraceRecord>> {
    let content =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut records = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// End-of-run state stored beside the JSONL trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalState {
    pub schema_version: u32,
    pub final_strategies: Vec<Vec<f64>>,
    pub final_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub arm: String,
    pub status: String,
    pub final_welfare: Option<f64>,
    pub trace_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub arms: Vec<String>,
    pub env_schema_version: u32,
    pub trace_schema_version: u32,
    pub report_schema_version: u32,
    pub runs: Vec<SeedRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub per_seed_final_welfare: Vec<Option<f64>>,
    pub mean_final_welfare: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub arms: Vec<ArmSummary>,
    pub failed_runs: usize,
    pub output_dir: PathBuf,
}

/// Runs one (seed, arm) cell: build the environment, simulate, and write
/// the trace, final state, metrics, and welfare CSV.
fn run_cell(
    config: &RunConfig,
    seed: u64,
    arm: MechanismKind,
    out_dir: &Path,
) -> Result<(f64, MetricsReport)> {
    let env = config.build_env(seed)?;
    let name = arm_name(arm);
    let lbr = LbrConfig {
        eta: config.dynamics.eta,
        rng_seed: derive_arm_seed(seed, name),
        acceptance_point: config.dynamics.acceptance_point,
        rounds: config.dynamics.rounds,
    };
    let options = TraceOptions::default();
    let trace = if config.reweighting.enabled {
        let rw = &config.reweighting;
        let mechanism = MechanismConfig {
            kind: arm,
            smt_map: rw.smt_map.clone(),
            hmt_map: rw.hmt_map.clone(),
        };
        let reweight = ReweightConfig {
            epochs: rw.epochs,
            epoch_len: rw.epoch_len,
            alpha: rw.alpha,
            utility_hook: rw.utility_hook,
            initial_weights: rw.initial_weights.clone(),
            w_min: rw.w_min,
            w_max: rw.w_max,
        };
        run_adaptive_reweighting(&env, &lbr, &reweight, &mechanism, &options)?
    } else {
        let l = env.population.num_groups();
        run_lbr(
            &env,
            baseline_adjustments(env.matching, env.population.len()),
            &vec![1.0; l],
            &lbr,
            &options,
        )?
    };

    let stem = format!("{name}_{seed}");
    write_trace_jsonl(&out_dir.join(format!("trace_{stem}.jsonl")), &trace)?;
    let final_state = FinalState {
        schema_version: TRACE_SCHEMA_VERSION,
        final_strategies: trace.final_strategies.clone(),
        final_weights: trace.final_weights.clone(),
    };
    write_atomic(
        &out_dir.join(format!("final_{stem}.json")),
        serde_json::to_string_pretty(&final_state)?.as_bytes(),
    )?;
    let metrics = experiment_metrics(&trace, &env.population.group_sizes)?;
    write_atomic(
        &out_dir.join(format!("metrics_{stem}.json")),
        serde_json::to_string_pretty(&metrics)?.as_bytes(),
    )?;
    write_atomic(
        &out_dir.join(format!("welfare_{stem}.csv")),
        metrics.welfare_curve_csv().as_bytes(),
    )?;
    Ok((metrics.final_welfare, metrics))
}

/// Runs the full seed-by-arm grid, isolating per-cell failures, and writes
/// `manifest.json` plus `summary.json` into the output directory.
pub fn run_experiment(config: &RunConfig, arms: &[MechanismKind]) -> Result<RunSummary> {
    config.validate()?;
    let out_dir = resolve_output_dir(config);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let cells: Vec<(u64, MechanismKind)> = config
        .seeds
        .iter()
        .flat_map(|&s| arms.iter().map(move |&a| (s, a)))
        .collect();
    let results: Vec<(u64, MechanismKind, std::result::Result<f64, String>)> = cells
        .par_iter()
        .map(|&(seed, arm)| {
            let outcome = run_cell(config, seed, arm, &out_dir)
                .map(|(w, _)| w)
                .map_err(|e| e.to_string());
            (seed, arm, outcome)
        })
        .collect();

    let mut runs = Vec::new();
    let mut failed = 0usize;
    for (seed, arm, outcome) in &results {
        let name = arm_name(*arm);
        match outcome {
            Ok(w) => runs.push(SeedRun {
                seed: *seed,
                arm: name.into(),
                status: "ok".into(),
                final_welfare: Some(*w),
                trace_file: Some(format!("trace_{name}_{seed}.jsonl")),
            }),
            Err(message) => {
                failed += 1;
                runs.push(SeedRun {
                    seed: *seed,
                    arm: name.into(),
                    status: format!("failed: {message}"),
                    final_welfare: None,
                    trace_file: None,
                });
            }
        }
    }

    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        config_hash: config_hash(config),
        seeds: config.seeds.clone(),
        arms: arms.iter().map(|&a| arm_name(a).to_string()).collect(),
        env_schema_version: crate::env::ENV_SCHEMA_VERSION,
        trace_schema_version: TRACE_SCHEMA_VERSION,
        report_schema_version: crate::analysis::REPORT_SCHEMA_VERSION,
        runs,
    };
    write_atomic(
        &out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;

    let arm_summaries: Vec<ArmSummary> = arms
        .iter()
        .map(|&arm| {
            let name = arm_name(arm);
            let per_seed: Vec<Option<f64>> = config
                .seeds
                .iter()
                .map(|&s| {
                    results
                        .iter()
                        .find(|(rs, ra, _)| *rs == s && arm_name(*ra) == name)
                        .and_then(|(_, _, o)| o.as_ref().ok().copied())
                })
                .collect();
            let ok: Vec<f64> = per_seed.iter().flatten().copied().collect();
            ArmSummary {
                arm: name.into(),
                mean_final_welfare: if ok.is_empty() {
                    None
                } else {
                    Some(ok.iter().sum::<f64>() / ok.len() as f64)
                },
                per_seed_final_welfare: per_seed,
            }
        })
        .collect();
    let summary = RunSummary {
        schema_version: MANIFEST_SCHEMA_VERSION,
        arms: arm_summaries,
        failed_runs: failed,
        output_dir: out_dir.clone(),
    };
    write_atomic(
        &out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    Ok(summary)
}

/// Recomputes welfare from stored strategies on a sample of trace rows and
/// compares with the recorded value.
pub fn verify_trace(
    env: &EnvironmentSpec,
    mechanism: &MechanismConfig,
    records: &[TraceRecord],
    tolerance: f64,
    stride: usize,
) -> Result<()> {
    for record in records.iter().step_by(stride.max(1)) {
        let Some(strategies) = &record.strategies else { continue };
        let creators: Vec<CreatorState> = strategies
            .iter()
            .zip(&env.creators)
            .map(|(s, c)| CreatorState {
                strategy: s.clone(),
                strategy_set: c.strategy_set.clone(),
            })
            .collect();
        let weights = GroupWeights {
            w: record.weights.clone(),
            w_min: f64::MIN_POSITIVE,
            w_max: f64::MAX,
        };
        let adjustments = deploy(mechanism, &weights, env)?;
        let welfare = welfare_deployed(&creators, &env.population, &env.relevance, &adjustments)?;
        if (welfare - record.welfare).abs() > tolerance {
            return Err(Error::InvalidEnvironment(format!(
                "trace welfare {} at step {} deviates from recomputation {}",
                record.welfare, record.step, welfare
            )));
        }
    }
    Ok(())
}

/// Report of the counterexample reproduction: plain dynamics versus UIR
/// with the center user's weight halved, paired per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproReport {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub rounds: usize,
    pub baseline_final_welfare: Vec<f64>,
    pub intervention_final_welfare: Vec<f64>,
    pub baseline_mean: f64,
    pub intervention_mean: f64,
    /// One-sided paired t-test p-value for intervention > baseline.
    pub p_value: f64,
}

/// Reproduces the counterexample experiment (Figure-1 shape): for each
/// seed, one baseline LBR run and one paired run with UIR and the center
/// user's weight fixed at 0.5, identical RNG streams.
pub fn run_repro_example(seeds: &[u64], rounds: usize) -> Result<ReproReport> {
    let results: Vec<Result<(f64, f64)>> = seeds
        .par_iter()
        .map(|&seed| {
            let env = crate::env::failure_example_env(seed);
            // A small step keeps the dynamics local enough that the trap
            // around the central user persists in the baseline arm.
            let lbr = LbrConfig {
                eta: 0.05,
                rng_seed: seed,
                acceptance_point: AcceptancePoint::PreProjection,
                rounds,
            };
            let options = TraceOptions { strategy_stride: Some(rounds.max(1)) };
            let baseline = run_lbr(
                &env,
                baseline_adjustments(env.matching, env.population.len()),
                &[1.0; 5],
                &lbr,
                &options,
            )?;
            let reweight = ReweightConfig {
                alpha: AlphaSchedule::Constant { alpha: 0.0 },
                initial_weights: Some(vec![0.5, 1.0, 1.0, 1.0, 1.0]),
                ..ReweightConfig::new(1, rounds)
            };
            let intervention = run_adaptive_reweighting(
                &env,
                &lbr,
                &reweight,
                &MechanismConfig::new(MechanismKind::Uir),
                &options,
            )?;
            Ok((
                baseline.records.last().map_or(0.0, |r| r.welfare),
                intervention.records.last().map_or(0.0, |r| r.welfare),
            ))
        })
        .collect();
    let mut baseline = Vec::with_capacity(seeds.len());
    let mut intervention = Vec::with_capacity(seeds.len());
    for r in results {
        let (b, i) = r?;
        baseline.push(b);
        intervention.push(i);
    }
    let diffs: Vec<f64> = intervention.iter().zip(&baseline).map(|(i, b)| i - b).collect();
    let n = seeds.len() as f64;
    Ok(ReproReport {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seeds: seeds.to_vec(),
        rounds,
        baseline_mean: baseline.iter().sum::<f64>() / n,
        intervention_mean: intervention.iter().sum::<f64>() / n,
        baseline_final_welfare: baseline,
        intervention_final_welfare: intervention,
        p_value: crate::analysis::paired_one_sided_p(&diffs),
    })
}
