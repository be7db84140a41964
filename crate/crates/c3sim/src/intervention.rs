//! Platform-side interventions: group-weight state, the UIR/SMT/HMT
//! mechanism deployments, and the adaptive reweighting loop.
//!
//! The reweighting loop runs `E` epochs of `M` better-response rounds each;
//! after every epoch the per-group weights receive a multiplicative update
//! `w_l <- w_l * exp(-alpha * pi_bar_l)`, are normalized to sum `L`, then
//! clipped into `[w_min, w_max]` — in exactly that order.

use std::io::Read;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{LbrConfig, Simulation, SimulationTrace, TraceOptions, TraceRecord};
use crate::env::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::game::{baseline_adjustments, UserAdjustment};

/// Per-group importance weights with their clipping bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupWeights {
    pub w: Vec<f64>,
    pub w_min: f64,
    pub w_max: f64,
}

/// Paper defaults for the clipping bounds.
pub const DEFAULT_W_MIN: f64 = 0.2;
pub const DEFAULT_W_MAX: f64 = 5.0;

impl GroupWeights {
    /// Unit weights for `l` groups with the paper's clipping bounds.
    pub fn ones(l: usize) -> Self {
        GroupWeights {
            w: vec![1.0; l],
            w_min: DEFAULT_W_MIN,
            w_max: DEFAULT_W_MAX,
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.is_empty() {
            return Err(Error::InvalidEnvironment("empty weight vector".into()));
        }
        if !(self.w_min > 0.0 && self.w_min <= self.w_max) {
            return Err(Error::InvalidEnvironment(format!(
                "invalid clipping bounds [{}, {}]",
                self.w_min, self.w_max
            )));
        }
        for (l, &w) in self.w.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::InvalidEnvironment(format!(
                    "weight {w} for group {l} is not a positive finite number"
                )));
            }
        }
        Ok(())
    }
}

/// One row of a piecewise-constant weight mapping: applies to weights
/// strictly below `weight_upper_bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTableRow {
    #[serde(with = "crate::serde_util::maybe_inf")]
    pub weight_upper_bound: f64,
    pub value: f64,
}

/// Piecewise-constant mapping from a group weight to a value, as deployed
/// online. Rows are ordered by strictly increasing upper bound; the final
/// row's bound is infinite, so every weight maps somewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub rows: Vec<WeightTableRow>,
}

impl WeightTable {
    pub fn new(rows: Vec<WeightTableRow>) -> Result<Self> {
        let table = WeightTable { rows };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::InvalidEnvironment("empty weight table".into()));
        }
        for pair in self.rows.windows(2) {
            if pair[1].weight_upper_bound <= pair[0].weight_upper_bound {
                return Err(Error::InvalidEnvironment(format!(
                    "weight table upper bounds must be strictly increasing ({} after {})",
                    pair[1].weight_upper_bound, pair[0].weight_upper_bound
                )));
            }
        }
        let last = self.rows.last().unwrap();
        if last.weight_upper_bound != f64::INFINITY {
            return Err(Error::InvalidEnvironment(
                "weight table must end with an `inf` upper bound".into(),
            ));
        }
        Ok(())
    }

    /// Value of the first row whose upper bound exceeds `w`.
    pub fn lookup(&self, w: f64) -> f64 {
        self.rows
            .iter()
            .find(|r| w < r.weight_upper_bound)
            .unwrap_or_else(|| self.rows.last().unwrap())
            .value
    }

    /// Parses a `weight_upper_bound,value` CSV; the last row's bound uses
    /// the sentinel `inf`.
    pub fn from_csv_str(content: &str, file: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(content.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse { file: file.into(), line: 1, message: e.to_string() })?;
        if headers.get(0) != Some("weight_upper_bound") || headers.get(1) != Some("value") {
            return Err(Error::Parse {
                file: file.into(),
                line: 1,
                message: "expected header `weight_upper_bound,value`".into(),
            });
        }
        let mut rows = Vec::new();
        for (row_idx, record) in reader.records().enumerate() {
            let line = row_idx + 2;
            let record = record.map_err(|e| Error::Parse {
                file: file.into(),
                line,
                message: e.to_string(),
            })?;
            let parse_field = |field: &str| -> Result<f64> {
                match field.trim() {
                    "inf" | "+inf" => Ok(f64::INFINITY),
                    other => other.parse().map_err(|_| Error::Parse {
                        file: file.into(),
                        line,
                        message: format!("cannot parse `{other}` as a float"),
                    }),
                }
            };
            rows.push(WeightTableRow {
                weight_upper_bound: parse_field(record.get(0).unwrap_or(""))?,
                value: parse_field(record.get(1).unwrap_or(""))?,
            });
        }
        let table = WeightTable { rows };
        table.validate().map_err(|e| Error::Parse {
            file: file.into(),
            line: 1,
            message: e.to_string(),
        })?;
        Ok(table)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let mut file =
            std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut content = String::new();
        file.read_to_string(&mut content)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_csv_str(&content, &path.display().to_string())
    }

    /// The published online HMT mapping (weight threshold to percentile).
    pub fn paper_hmt_table() -> Self {
        let bounds = [1.0, 1.19, 1.79, 2.13, 2.36, 2.68, f64::INFINITY];
        let values = [0.99, 0.95, 0.90, 0.85, 0.75, 0.7, 0.1];
        WeightTable {
            rows: bounds
                .iter()
                .zip(&values)
                .map(|(&b, &v)| WeightTableRow { weight_upper_bound: b, value: v })
                .collect(),
        }
    }
}

/// How a group weight maps into a mechanism parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightMap {
    /// Multiply the baseline parameter by the weight (the offline default:
    /// `beta(x) = beta * w(x)`, `K(x) = ceil(K * w(x))`).
    ScaleBase,
    /// Piecewise-constant table; the looked-up value replaces the weight as
    /// the multiplier on the baseline parameter.
    Table(WeightTable),
}

impl WeightMap {
    fn multiplier(&self, w: f64) -> f64 {
        match self {
            WeightMap::ScaleBase => w,
            WeightMap::Table(t) => t.lookup(w),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    None,
    Uir,
    Smt,
    Hmt,
}

/// Which mechanism is active and how weights map to its parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub kind: MechanismKind,
    pub smt_map: WeightMap,
    pub hmt_map: WeightMap,
}

impl MechanismConfig {
    pub fn new(kind: MechanismKind) -> Self {
        MechanismConfig {
            kind,
            smt_map: WeightMap::ScaleBase,
            hmt_map: WeightMap::ScaleBase,
        }
    }
}

impl Default for MechanismConfig {
    fn default() -> Self {
        Self::new(MechanismKind::None)
    }
}

/// Translates group weights into the per-user effective parameters the
/// game evaluator consumes: UIR scales post-matching rewards, SMT maps the
/// temperature, HMT maps the truncation level.
pub fn deploy(
    mechanism: &MechanismConfig,
    weights: &GroupWeights,
    env: &EnvironmentSpec,
) -> Result<Vec<UserAdjustment>> {
    weights.validate()?;
    let pop = &env.population;
    if weights.len() != pop.num_groups() {
        return Err(Error::InvalidEnvironment(format!(
            "{} weights for {} user groups",
            weights.len(),
            pop.num_groups()
        )));
    }
    let base = env.matching;
    let mut adjustments = baseline_adjustments(base, pop.len());
    match mechanism.kind {
        MechanismKind::None => {}
        MechanismKind::Uir => {
            for (adj, &g) in adjustments.iter_mut().zip(&pop.group_of) {
                adj.reward_scale = weights.w[g];
            }
        }
        MechanismKind::Smt => {
            for (adj, &g) in adjustments.iter_mut().zip(&pop.group_of) {
                let beta = base.beta * mechanism.smt_map.multiplier(weights.w[g]);
                if !(beta > 0.0) && base.beta > 0.0 {
                    return Err(Error::InvalidEnvironment(format!(
                        "SMT mapping produced non-positive temperature {beta} for group {g}"
                    )));
                }
                adj.beta = beta;
            }
        }
        MechanismKind::Hmt => {
            for (adj, &g) in adjustments.iter_mut().zip(&pop.group_of) {
                let mult = mechanism.hmt_map.multiplier(weights.w[g]);
                let k = (base.k as f64 * mult).ceil();
                if !(k >= 1.0) {
                    return Err(Error::InvalidEnvironment(format!(
                        "HMT mapping produced truncation level {k} for group {g}"
                    )));
                }
                // Levels above the creator count are clamped (with a log
                // line) inside the evaluator.
                adj.k = k as usize;
            }
        }
    }
    Ok(adjustments)
}

/// Step-size schedule for the multiplicative weight update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaSchedule {
    Constant { alpha: f64 },
    /// `first` for the first half of the epochs, `second` afterwards.
    TwoPhase { first: f64, second: f64 },
}

impl AlphaSchedule {
    /// The paper's schedule: 0.5 for the first half, then 0.1.
    pub fn paper() -> Self {
        AlphaSchedule::TwoPhase { first: 0.5, second: 0.1 }
    }
}

/// Step size at a given epoch.
pub fn alpha_at(schedule: &AlphaSchedule, epoch: usize, total_epochs: usize) -> f64 {
    match schedule {
        AlphaSchedule::Constant { alpha } => *alpha,
        AlphaSchedule::TwoPhase { first, second } => {
            if 2 * epoch < total_epochs {
                *first
            } else {
                *second
            }
        }
    }
}

/// The per-user satisfaction signal fed into the weight update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityHook {
    /// Exact expected matched relevance (the default).
    ExpectedRelevance,
    /// One sampled interaction per user per round: draw a creator from the
    /// match distribution and record the realized relevance. Uses a
    /// dedicated RNG stream so the dynamics' draw sequence is untouched.
    SampledInteraction,
}

/// Configuration of the adaptive reweighting loop (Algorithm 1 shape:
/// exactly `epochs` epochs of `epoch_len` rounds each).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightConfig {
    pub epochs: usize,
    pub epoch_len: usize,
    pub alpha: AlphaSchedule,
    pub utility_hook: UtilityHook,
    /// Initial weights; `None` means all ones. With `alpha = 0` these stay
    /// fixed for the whole run, which is how the manual half-weight
    /// experiment is expressed.
    pub initial_weights: Option<Vec<f64>>,
    pub w_min: f64,
    pub w_max: f64,
}

impl ReweightConfig {
    pub fn new(epochs: usize, epoch_len: usize) -> Self {
        ReweightConfig {
            epochs,
            epoch_len,
            alpha: AlphaSchedule::paper(),
            utility_hook: UtilityHook::ExpectedRelevance,
            initial_weights: None,
            w_min: DEFAULT_W_MIN,
            w_max: DEFAULT_W_MAX,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.epoch_len == 0 {
            return Err(Error::InvalidEnvironment(
                "reweighting needs at least one epoch of at least one round".into(),
            ));
        }
        Ok(())
    }
}

/// Mean of a group's recorded utility over a trace slice.
pub fn group_mean_utility(records: &[TraceRecord], group: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidEnvironment("empty trace slice".into()));
    }
    let mut sum = 0.0;
    for r in records {
        let v = r.group_utilities.get(group).copied().ok_or_else(|| {
            Error::InvalidEnvironment(format!("group {group} missing from trace record"))
        })?;
        sum += v;
    }
    Ok(sum / records.len() as f64)
}

/// One multiplicative update: exponential step, normalization to sum `L`,
/// then clipping — Algorithm 1's exact line order. The input is unchanged.
pub fn update_weights(weights: &GroupWeights, pi_bar: &[f64], alpha: f64) -> Result<GroupWeights> {
    if pi_bar.len() != weights.len() {
        return Err(Error::InvalidEnvironment(format!(
            "{} group utilities for {} weights",
            pi_bar.len(),
            weights.len()
        )));
    }
    if let Some((group, &value)) = pi_bar.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteGroupUtility { group, value });
    }
    let l = weights.len() as f64;
    let mut w: Vec<f64> = weights
        .w
        .iter()
        .zip(pi_bar)
        .map(|(wl, pl)| wl * (-alpha * pl).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v *= l / sum;
    }
    for v in &mut w {
        *v = v.clamp(weights.w_min, weights.w_max);
    }
    Ok(GroupWeights { w, w_min: weights.w_min, w_max: weights.w_max })
}

/// Group utilities per the configured hook, for one round.
fn hook_group_utilities(
    sim: &Simulation,
    hook: UtilityHook,
    hook_rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    match hook {
        UtilityHook::ExpectedRelevance => sim.group_utilities(),
        UtilityHook::SampledInteraction => {
            let pop = &sim.env.population;
            let mut sums = vec![0.0; pop.num_groups()];
            for (j, &g) in pop.group_of.iter().enumerate() {
                let probs = sim.match_probs(j);
                let mut target = hook_rng.gen::<f64>();
                let mut chosen = probs.last().map(|&(i, _)| i).unwrap_or(0);
                for &(i, p) in &probs {
                    target -= p;
                    if target <= 0.0 {
                        chosen = i;
                        break;
                    }
                }
                let sigma = crate::game::relevance(
                    &sim.env.relevance,
                    &sim.creators[chosen].strategy,
                    &pop.embeddings[j],
                )
                .unwrap_or(0.0);
                sums[g] += sigma;
            }
            sums.iter()
                .zip(&pop.group_sizes)
                .map(|(s, &n)| s / n as f64)
                .collect()
        }
    }
}

/// Algorithm 1: deploy the current weights, run an epoch of LBR rounds,
/// average the observed group utilities, update the weights, repeat —
/// carrying strategies across epochs.
///
/// When `alpha` evaluates to exactly 0 for an epoch, the update (including
/// its normalization) is skipped so manually fixed weights stay put.
pub fn run_adaptive_reweighting(
    env: &EnvironmentSpec,
    lbr: &LbrConfig,
    reweight: &ReweightConfig,
    mechanism: &MechanismConfig,
    options: &TraceOptions,
) -> Result<SimulationTrace> {
    reweight.validate()?;
    let l = env.population.num_groups();
    let mut weights = GroupWeights {
        w: reweight.initial_weights.clone().unwrap_or_else(|| vec![1.0; l]),
        w_min: reweight.w_min,
        w_max: reweight.w_max,
    };
    weights.validate()?;

    let mut sim = Simulation::new(env);
    let mut rng = ChaCha8Rng::seed_from_u64(lbr.rng_seed);
    // Dedicated stream for the sampled-interaction hook; never advanced by
    // the dynamics.
    let mut hook_rng = ChaCha8Rng::seed_from_u64(lbr.rng_seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut trace = SimulationTrace::new();
    let stride = options.stride_for(env.num_creators());
    let total_rounds = reweight.epochs * reweight.epoch_len;
    let mut step = 0usize;
    for epoch in 0..reweight.epochs {
        let adjustments = deploy(mechanism, &weights, env)?;
        sim.set_adjustments(adjustments);
        let mut pi_sums = vec![0.0; l];
        for _ in 0..reweight.epoch_len {
            let outcomes = sim.run_round(lbr, &mut rng)?;
            let hook_utils = hook_group_utilities(&sim, reweight.utility_hook, &mut hook_rng);
            for (s, v) in pi_sums.iter_mut().zip(&hook_utils) {
                *s += v;
            }
            let store = step % stride == 0 || step + 1 == total_rounds;
            trace.records.push(TraceRecord {
                step,
                epoch,
                welfare: sim.welfare(),
                group_utilities: sim.group_utilities(),
                weights: weights.w.clone(),
                accepted: outcomes.iter().map(|o| o.accepted).collect(),
                strict: outcomes.iter().map(|o| o.strict).collect(),
                strategies: store
                    .then(|| sim.creators.iter().map(|c| c.strategy.clone()).collect()),
            });
            step += 1;
        }
        let alpha = alpha_at(&reweight.alpha, epoch, reweight.epochs);
        if alpha != 0.0 {
            let pi_bar: Vec<f64> =
                pi_sums.iter().map(|s| s / reweight.epoch_len as f64).collect();
            weights = update_weights(&weights, &pi_bar, alpha)?;
        }
    }
    trace.final_strategies = sim.creators.iter().map(|c| c.strategy.clone()).collect();
    trace.final_weights = weights.w;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::run_lbr;
    use crate::env::failure_example_env;
    use approx::assert_abs_diff_eq;

    #[test]
    fn alpha_paper_schedule() {
        let s = AlphaSchedule::paper();
        assert_eq!(alpha_at(&s, 0, 600), 0.5);
        assert_eq!(alpha_at(&s, 299, 600), 0.5);
        assert_eq!(alpha_at(&s, 300, 600), 0.1);
        assert_eq!(alpha_at(&s, 599, 600), 0.1);
        let c = AlphaSchedule::Constant { alpha: 0.3 };
        assert_eq!(alpha_at(&c, 17, 600), 0.3);
    }

    #[test]
    fn update_weights_hand_example() {
        // (a) w_l * exp(-alpha * pi_l), (b) normalize to sum L, (c) clip.
        let w = GroupWeights::ones(2);
        let out = update_weights(&w, &[0.8, 0.2], 0.5).unwrap();
        let a = (-0.4f64).exp();
        let b = (-0.1f64).exp();
        let norm = 2.0 / (a + b);
        assert_abs_diff_eq!(out.w[0], a * norm, epsilon = 1e-15);
        assert_abs_diff_eq!(out.w[1], b * norm, epsilon = 1e-15);
        assert_abs_diff_eq!(out.w[0], 0.8511, epsilon = 1e-4);
        assert_abs_diff_eq!(out.w[1], 1.1489, epsilon = 1e-4);
        // Input untouched.
        assert_eq!(w.w, vec![1.0, 1.0]);
    }

    #[test]
    fn update_weights_symmetry_and_identity() {
        let w = GroupWeights::ones(3);
        let out = update_weights(&w, &[0.4, 0.4, 0.4], 0.7).unwrap();
        for v in &out.w {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
        let out = update_weights(&w, &[0.0, 0.0, 0.0], 0.5).unwrap();
        assert_eq!(out.w, w.w);
    }

    #[test]
    fn update_weights_clips_at_min() {
        let w = GroupWeights::ones(2);
        let out = update_weights(&w, &[10.0, 0.0], 1.0).unwrap();
        assert_eq!(out.w[0], 0.2);
    }

    #[test]
    fn update_weights_permutation_equivariance() {
        let w = GroupWeights {
            w: vec![0.5, 1.5, 1.0],
            w_min: 0.2,
            w_max: 5.0,
        };
        let pi = [0.9, 0.1, 0.4];
        let out = update_weights(&w, &pi, 0.5).unwrap();
        let wp = GroupWeights { w: vec![1.0, 0.5, 1.5], w_min: 0.2, w_max: 5.0 };
        let pip = [0.4, 0.9, 0.1];
        let outp = update_weights(&wp, &pip, 0.5).unwrap();
        assert_abs_diff_eq!(out.w[0], outp.w[1], epsilon = 1e-15);
        assert_abs_diff_eq!(out.w[1], outp.w[2], epsilon = 1e-15);
        assert_abs_diff_eq!(out.w[2], outp.w[0], epsilon = 1e-15);
    }

    #[test]
    fn update_weights_monotone_ordering() {
        // Equal weights, lower utility: never ends with the smaller weight.
        let w = GroupWeights::ones(2);
        let out = update_weights(&w, &[0.1, 0.7], 0.5).unwrap();
        assert!(out.w[0] >= out.w[1]);
    }

    #[test]
    fn update_weights_rejects_non_finite() {
        let w = GroupWeights::ones(2);
        let err = update_weights(&w, &[f64::NAN, 0.0], 0.5).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGroupUtility { group: 0, .. }));
    }

    #[test]
    fn weight_table_paper_rows() {
        let t = WeightTable::paper_hmt_table();
        assert_eq!(t.lookup(0.5), 0.99);
        assert_eq!(t.lookup(2.0), 0.85);
        assert_eq!(t.lookup(3.0), 0.1);
        assert_eq!(t.lookup(2.68), 0.1);
    }

    #[test]
    fn weight_table_csv_roundtrip_and_errors() {
        let csv = "weight_upper_bound,value\n1.0,0.99\n2.13,0.85\ninf,0.1\n";
        let t = WeightTable::from_csv_str(csv, "map.csv").unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.lookup(1.5), 0.85);
        assert_eq!(t.lookup(9.0), 0.1);

        let bad = "weight_upper_bound,value\n2.0,0.9\n1.0,0.8\ninf,0.1\n";
        assert!(WeightTable::from_csv_str(bad, "map.csv").is_err());
        let no_inf = "weight_upper_bound,value\n1.0,0.9\n2.0,0.8\n";
        assert!(WeightTable::from_csv_str(no_inf, "map.csv").is_err());
        let bad_header = "weight,value\n1.0,0.9\n";
        assert!(WeightTable::from_csv_str(bad_header, "map.csv").is_err());
    }

    #[test]
    fn deploy_mechanisms() {
        let env = failure_example_env(1);
        let mut weights = GroupWeights::ones(5);
        weights.w = vec![2.0, 1.0, 0.6, 1.0, 1.0];

        let adj = deploy(&MechanismConfig::new(MechanismKind::None), &weights, &env).unwrap();
        assert_eq!(adj, baseline_adjustments(env.matching, 5));

        let adj = deploy(&MechanismConfig::new(MechanismKind::Uir), &weights, &env).unwrap();
        assert_eq!(adj[0].reward_scale, 2.0);
        assert_eq!(adj[2].reward_scale, 0.6);
        assert_eq!(adj[0].beta, env.matching.beta);

        let adj = deploy(&MechanismConfig::new(MechanismKind::Smt), &weights, &env).unwrap();
        assert_abs_diff_eq!(adj[0].beta, env.matching.beta * 2.0, epsilon = 1e-15);
        assert_eq!(adj[0].reward_scale, 1.0);

        let adj = deploy(&MechanismConfig::new(MechanismKind::Hmt), &weights, &env).unwrap();
        // K = 3 here: ceil(3 * 2.0) = 6 (clamped to n at evaluation time),
        // ceil(3 * 0.6) = 2.
        assert_eq!(adj[0].k, 6);
        assert_eq!(adj[2].k, 2);
    }

    #[test]
    fn deploy_uir_unit_weights_is_baseline() {
        let env = failure_example_env(2);
        let adj = deploy(
            &MechanismConfig::new(MechanismKind::Uir),
            &GroupWeights::ones(5),
            &env,
        )
        .unwrap();
        assert_eq!(adj, baseline_adjustments(env.matching, 5));
    }

    #[test]
    fn smt_scaling_paper_example() {
        // beta(x) = beta * w(x): beta = 0.1, w = 2 -> 0.2.
        let map = WeightMap::ScaleBase;
        assert_abs_diff_eq!(0.1 * map.multiplier(2.0), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn group_mean_utility_arithmetic() {
        let mk = |u: f64| TraceRecord {
            step: 0,
            epoch: 0,
            welfare: 0.0,
            group_utilities: vec![u],
            weights: vec![1.0],
            accepted: vec![],
            strict: vec![],
            strategies: None,
        };
        let records = vec![mk(0.2), mk(0.4)];
        assert_abs_diff_eq!(group_mean_utility(&records, 0).unwrap(), 0.3, epsilon = 1e-15);
        assert!(group_mean_utility(&[], 0).is_err());
        assert!(group_mean_utility(&records, 3).is_err());
    }

    #[test]
    fn adaptive_zero_alpha_matches_plain_round() {
        let env = failure_example_env(5);
        let lbr = LbrConfig { rng_seed: 9, rounds: 1, ..Default::default() };
        let reweight = ReweightConfig {
            alpha: AlphaSchedule::Constant { alpha: 0.0 },
            ..ReweightConfig::new(1, 1)
        };
        let adaptive = run_adaptive_reweighting(
            &env,
            &lbr,
            &reweight,
            &MechanismConfig::default(),
            &TraceOptions::full(),
        )
        .unwrap();
        let plain = run_lbr(
            &env,
            baseline_adjustments(env.matching, env.population.len()),
            &[1.0; 5],
            &lbr,
            &TraceOptions::full(),
        )
        .unwrap();
        assert_eq!(adaptive.final_strategies, plain.final_strategies);
        assert_eq!(adaptive.final_weights, vec![1.0; 5]);
    }

    #[test]
    fn adaptive_none_mechanism_matches_plain_lbr_bitwise() {
        // Weights evolve but the evaluator ignores them: the welfare
        // trajectory must be seed-identical to plain LBR.
        let env = failure_example_env(6);
        let rounds = 40;
        let lbr = LbrConfig { rng_seed: 4, rounds, ..Default::default() };
        let reweight = ReweightConfig::new(8, 5);
        let adaptive = run_adaptive_reweighting(
            &env,
            &lbr,
            &reweight,
            &MechanismConfig::default(),
            &TraceOptions::full(),
        )
        .unwrap();
        let plain = run_lbr(
            &env,
            baseline_adjustments(env.matching, env.population.len()),
            &[1.0; 5],
            &lbr,
            &TraceOptions::full(),
        )
        .unwrap();
        let aw: Vec<f64> = adaptive.records.iter().map(|r| r.welfare).collect();
        let pw: Vec<f64> = plain.records.iter().map(|r| r.welfare).collect();
        assert_eq!(aw, pw);
        assert_eq!(adaptive.final_strategies, plain.final_strategies);
        // Weights did evolve away from 1.
        assert!(adaptive.final_weights.iter().any(|&w| (w - 1.0).abs() > 1e-9));
    }

    #[test]
    fn adaptive_weights_follow_group_utilities() {
        // Epochs with UIR: the central group (highest utility under the
        // trapped profile) should not end with the largest weight.
        let env = failure_example_env(8);
        let lbr = LbrConfig { rng_seed: 2, rounds: 0, ..Default::default() };
        let reweight = ReweightConfig {
            alpha: AlphaSchedule::Constant { alpha: 0.5 },
            ..ReweightConfig::new(4, 10)
        };
        let trace = run_adaptive_reweighting(
            &env,
            &lbr,
            &reweight,
            &MechanismConfig::new(MechanismKind::Uir),
            &TraceOptions::default(),
        )
        .unwrap();
        assert_eq!(trace.records.len(), 40);
        let max = trace.final_weights.iter().cloned().fold(f64::MIN, f64::max);
        assert!(trace.final_weights[0] < max);
    }

    #[test]
    fn sampled_hook_runs_and_preserves_dynamics_stream() {
        let env = failure_example_env(3);
        let lbr = LbrConfig { rng_seed: 11, ..Default::default() };
        let mk = |hook| ReweightConfig {
            alpha: AlphaSchedule::Constant { alpha: 0.3 },
            utility_hook: hook,
            ..ReweightConfig::new(2, 3)
        };
        let exact = run_adaptive_reweighting(
            &env,
            &lbr,
            &mk(UtilityHook::ExpectedRelevance),
            &MechanismConfig::default(),
            &TraceOptions::full(),
        )
        .unwrap();
        let sampled = run_adaptive_reweighting(
            &env,
            &lbr,
            &mk(UtilityHook::SampledInteraction),
            &MechanismConfig::default(),
            &TraceOptions::full(),
        )
        .unwrap();
        // Same dynamics RNG stream under mechanism None: identical
        // strategies even though the hook (and thus the weights) differ.
        assert_eq!(exact.final_strategies, sampled.final_strategies);
        assert!(sampled.final_weights.iter().all(|w| w.is_finite()));
    }
}
