//! Scratch probe: baseline vs UIR final welfare as a function of the
//! synthetic cluster spread (the paper leaves the Gaussian std unstated).

use c3sim::dynamics::{run_lbr, LbrConfig, TraceOptions};
use c3sim::env::{kmeans_groups, EnvironmentSpec, SYNTHETIC_CLUSTER_SIZES};
use c3sim::game::{
    CreatorState, MatchingParams, RelevanceModel, RewardScheme, StrategySet, UserPopulation,
};
use c3sim::intervention::{MechanismConfig, MechanismKind, ReweightConfig};
use c3sim::runner::derive_arm_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn synth_with_spread(seed: u64, spread: f64, noise_std: f64) -> EnvironmentSpec {
    let d = 5;
    let n = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..SYNTHETIC_CLUSTER_SIZES.len())
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect();
    let mut embeddings = Vec::new();
    let mut group_of = Vec::new();
    for (g, (&size, center)) in SYNTHETIC_CLUSTER_SIZES.iter().zip(&centers).enumerate() {
        for _ in 0..size {
            let x: Vec<f64> = center
                .iter()
                .map(|&c| c + spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            embeddings.push(x);
            group_of.push(g);
        }
    }
    let mut population = UserPopulation::uniform(embeddings).unwrap();
    population.set_groups(group_of, SYNTHETIC_CLUSTER_SIZES.len()).unwrap();
    let largest = &centers[0];
    let creators = (0..n)
        .map(|_| {
            let mut s: Vec<f64> = largest
                .iter()
                .map(|&c| c + noise_std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1.0 {
                for v in &mut s {
                    *v /= norm;
                }
            }
            CreatorState { strategy: s, strategy_set: StrategySet::Ball { radius: 1.0, center: vec![0.0; d] } }
        })
        .collect();
    EnvironmentSpec {
        schema_version: c3sim::env::ENV_SCHEMA_VERSION,
        provenance: "scratch-spread".into(),
        seed,
        population,
        creators,
        items: Vec::new(),
        relevance: RelevanceModel::TruncatedLinearDistance { c0: 1.0, c1: 3.0 },
        matching: MatchingParams { k: 20, beta: 0.1 },
        reward: RewardScheme::Engagement,
    }
}

fn main() {
    let spreads: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().unwrap())
        .collect();
    let spreads = if spreads.is_empty() { vec![0.5, 0.3, 0.2, 0.1] } else { spreads };
    let rounds = 3000;
    for &spread in &spreads {
        for seed in 0..2u64 {
            let mut env = synth_with_spread(seed, spread, 0.05);
            kmeans_groups(&mut env.population, 20, seed, 100).unwrap();
            let opts = TraceOptions { strategy_stride: Some(rounds), ..Default::default() };

            let lbr = LbrConfig {
                eta: 0.2,
                rounds,
                rng_seed: derive_arm_seed(seed, "none"),
                ..Default::default()
            };
            let l = env.population.num_groups();
            let base = run_lbr(
                &env,
                c3sim::dynamics::baseline_adjustments(env.matching, env.population.len()),
                &vec![1.0; l],
                &lbr,
                &opts,
            )
            .unwrap();
            let bw = base.records.last().unwrap().welfare;
            let bu = base.records.last().unwrap().group_utilities.clone();

            let lbr_u = LbrConfig {
                eta: 0.2,
                rng_seed: derive_arm_seed(seed, "uir"),
                ..Default::default()
            };
            let rw = ReweightConfig::new(600, 5);
            let mech = MechanismConfig::new(MechanismKind::Uir);
            let uir =
                c3sim::intervention::run_adaptive_reweighting(&env, &lbr_u, &rw, &mech, &opts)
                    .unwrap();
            let uw = uir.records.last().unwrap().welfare;
            let umin = uir
                .records
                .last()
                .unwrap()
                .group_utilities
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            let bmin = bu.iter().cloned().fold(f64::INFINITY, f64::min);
            let bmax = bu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            println!(
                "spread {spread:.2} seed {seed}: base {bw:.4} (umin {bmin:.3} umax {bmax:.3})  uir {uw:.4} (umin {umin:.3})  diff {:+.4}",
                uw - bw
            );
        }
    }
}
