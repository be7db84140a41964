//! Thin command-line front end over the `c3sim` library: environment
//! generation, simulation runs, mechanism sweeps, and verification checks.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use c3sim::analysis::{check_monotone_env, run_theorem2_check, Theorem2Config};
use c3sim::config::{parse_config, Overrides, RunConfig};
use c3sim::dynamics::SimulationTrace;
use c3sim::intervention::MechanismKind;
use c3sim::runner::{
    read_trace_jsonl, run_experiment, run_repro_example, write_atomic, OUTPUT_DIR_ENV,
};
use c3sim::Error;

#[derive(Parser)]
#[command(name = "c3sim", version, about = "Creator-competition simulation and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an environment from a config and write it as JSON.
    GenEnv {
        /// Run config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Environment seed; defaults to the config's first seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured experiment (single mechanism arm).
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run all four mechanism arms (none, uir, smt, hmt) on each seed.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Reproduce the five-user counterexample: baseline dynamics versus
    /// reweighted matching, paired per seed.
    ReproExample {
        #[arg(long, default_value_t = 20)]
        num_seeds: u64,
        #[arg(long, default_value_t = 2000)]
        rounds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the welfare-monotonicity condition at the creators'
    /// current strategies in an environment file.
    CheckMonotone {
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the weight-to-welfare direction on the
    /// orthogonal-basis environment.
    CheckGradient {
        #[arg(long, default_value_t = 100)]
        num_creators: usize,
        #[arg(long, default_value_t = 20)]
        num_seeds: u64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 1000)]
        pre_rounds: usize,
        #[arg(long, default_value_t = 20)]
        settling_rounds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distill metrics from a stored trace.
    Metrics {
        /// JSONL trace written by `simulate` or `sweep`.
        #[arg(long)]
        trace: PathBuf,
        /// Environment file the trace was produced on (for group sizes).
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args, Default)]
struct OverrideArgs {
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    epoch_len: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
    /// Mechanism arm: none, uir, smt, or hmt.
    #[arg(long, value_parser = parse_mechanism)]
    mechanism: Option<MechanismKind>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory; the environment variable C3SIM_OUTPUT_DIR takes
    /// precedence over both this flag and the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn parse_mechanism(s: &str) -> Result<MechanismKind, String> {
    match s {
        "none" => Ok(MechanismKind::None),
        "uir" => Ok(MechanismKind::Uir),
        "smt" => Ok(MechanismKind::Smt),
        "hmt" => Ok(MechanismKind::Hmt),
        other => Err(format!("unknown mechanism `{other}` (expected none, uir, smt, hmt)")),
    }
}

fn load_config(path: &Option<PathBuf>, overrides: &OverrideArgs) -> c3sim::Result<RunConfig> {
    let mut config = match path {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    config.apply_overrides(&Overrides {
        eta: overrides.eta,
        rounds: overrides.rounds,
        epochs: overrides.epochs,
        epoch_len: overrides.epoch_len,
        groups: overrides.groups,
        mechanism: overrides.mechanism,
        seeds: overrides.seeds.clone(),
        output_dir: overrides.output_dir.clone(),
    });
    config.validate()?;
    Ok(config)
}

fn emit<T: serde::Serialize>(value: &T, out: &Option<PathBuf>) -> c3sim::Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(Error::from)?;
    match out {
        Some(path) => write_atomic(path, json.as_bytes()),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> c3sim::Result<()> {
    match cli.command {
        Command::GenEnv { config, seed, out } => {
            let config = load_config(&config, &OverrideArgs::default())?;
            let seed = seed.or_else(|| config.seeds.first().copied()).unwrap_or(0);
            let env = config.build_env(seed)?;
            env.save(&out)?;
            log::info!("wrote environment to {}", out.display());
        }
        Command::Simulate { config, overrides } => {
            let config = load_config(&config, &overrides)?;
            let arm = if config.reweighting.enabled {
                config.reweighting.mechanism
            } else {
                MechanismKind::None
            };
            let summary = run_experiment(&config, &[arm])?;
            report_summary(&summary)?;
        }
        Command::Sweep { config, overrides } => {
            let config = load_config(&config, &overrides)?;
            let arms = [
                MechanismKind::None,
                MechanismKind::Uir,
                MechanismKind::Smt,
                MechanismKind::Hmt,
            ];
            let summary = run_experiment(&config, &arms)?;
            report_summary(&summary)?;
        }
        Command::ReproExample { num_seeds, rounds, out } => {
            let seeds: Vec<u64> = (0..num_seeds).collect();
            let report = run_repro_example(&seeds, rounds)?;
            emit(&report, &out)?;
        }
        Command::CheckMonotone { env, tolerance, out } => {
            let env = c3sim::env::EnvironmentSpec::load(&env)?;
            let report = check_monotone_env(&env, tolerance);
            emit(&report, &out)?;
        }
        Command::CheckGradient {
            num_creators,
            num_seeds,
            delta,
            pre_rounds,
            settling_rounds,
            out,
        } => {
            let config = Theorem2Config {
                n_creators: num_creators,
                seeds: (0..num_seeds).collect(),
                delta,
                pre_rounds,
                settling_rounds,
                ..Default::default()
            };
            let report = run_theorem2_check(&config)?;
            emit(&report, &out)?;
        }
        Command::Metrics { trace, env, out } => {
            let env = c3sim::env::EnvironmentSpec::load(&env)?;
            let records = read_trace_jsonl(&trace)?;
            let last = records.last().ok_or_else(|| {
                Error::InvalidEnvironment(format!("empty trace {}", trace.display()))
            })?;
            let trace = SimulationTrace {
                schema_version: c3sim::dynamics::TRACE_SCHEMA_VERSION,
                final_strategies: last.strategies.clone().unwrap_or_default(),
                final_weights: last.weights.clone(),
                records,
            };
            let report =
                c3sim::analysis::experiment_metrics(&trace, &env.population.group_sizes)?;
            emit(&report, &out)?;
        }
    }
    Ok(())
}

fn report_summary(summary: &c3sim::runner::RunSummary) -> c3sim::Result<()> {
    for arm in &summary.arms {
        match arm.mean_final_welfare {
            Some(w) => println!("{}: mean final welfare {w:.6}", arm.arm),
            None => println!("{}: all runs failed", arm.arm),
        }
    }
    println!("artifacts in {}", summary.output_dir.display());
    if summary.failed_runs > 0 {
        return Err(Error::InvalidEnvironment(format!(
            "{} of the runs failed; see {} in manifest.json",
            summary.failed_runs,
            summary.output_dir.join("manifest.json").display()
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    log::debug!("output dir override: {:?}", std::env::var_os(OUTPUT_DIR_ENV));
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::ConfigValidation(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
