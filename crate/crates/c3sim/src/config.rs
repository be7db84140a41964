//! Run configuration: JSON ingestion with exhaustive validation (every
//! violation reported, not just the first), paper defaults, and CLI
//! override precedence (flag > config file > default).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::AcceptancePoint;
use crate::env::{self, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::game::MatchingParams;
use crate::intervention::{AlphaSchedule, MechanismKind, UtilityHook, WeightMap};

/// Which game instance a run is built on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSelector {
    /// The five-user counterexample.
    FailureExample,
    /// The clustered synthetic population (m = 2000, n = 200).
    Synthetic,
    /// Catalog environment built from embedding CSV files.
    Embedding {
        user_file: PathBuf,
        item_file: PathBuf,
        #[serde(default = "defaults::embedding_creators")]
        n_creators: usize,
        #[serde(default = "defaults::shared_items")]
        shared_items: usize,
        #[serde(default = "defaults::private_items")]
        private_items: usize,
    },
}

/// Dynamics section; defaults follow the paper's offline setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSection {
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    /// Total simulation rounds `T`.
    #[serde(default = "defaults::rounds")]
    pub rounds: usize,
    #[serde(default = "defaults::acceptance_point")]
    pub acceptance_point: AcceptancePoint,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        DynamicsSection {
            eta: defaults::eta(),
            rounds: defaults::rounds(),
            acceptance_point: defaults::acceptance_point(),
        }
    }
}

/// Adaptive-reweighting section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightSection {
    /// When false, runs are plain LBR and the rest of this section is
    /// ignored.
    #[serde(default = "defaults::enabled")]
    pub enabled: bool,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::epoch_len")]
    pub epoch_len: usize,
    #[serde(default = "defaults::alpha")]
    pub alpha: AlphaSchedule,
    #[serde(default = "defaults::w_min")]
    pub w_min: f64,
    #[serde(default = "defaults::w_max")]
    pub w_max: f64,
    /// Number of k-means user groups `L`; `None` picks the paper default
    /// for the environment (20 synthetic, 15 embedding, per-user groups on
    /// the counterexample).
    #[serde(default)]
    pub groups: Option<usize>,
    #[serde(default = "defaults::mechanism")]
    pub mechanism: MechanismKind,
    #[serde(default = "defaults::weight_map")]
    pub smt_map: WeightMap,
    #[serde(default = "defaults::weight_map")]
    pub hmt_map: WeightMap,
    #[serde(default)]
    pub initial_weights: Option<Vec<f64>>,
    #[serde(default = "defaults::utility_hook")]
    pub utility_hook: UtilityHook,
}

impl Default for ReweightSection {
    fn default() -> Self {
        ReweightSection {
            enabled: defaults::enabled(),
            epochs: defaults::epochs(),
            epoch_len: defaults::epoch_len(),
            alpha: defaults::alpha(),
            w_min: defaults::w_min(),
            w_max: defaults::w_max(),
            groups: None,
            mechanism: defaults::mechanism(),
            smt_map: defaults::weight_map(),
            hmt_map: defaults::weight_map(),
            initial_weights: None,
            utility_hook: defaults::utility_hook(),
        }
    }
}

/// Top-level run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "defaults::environment")]
    pub environment: EnvSelector,
    #[serde(default)]
    pub dynamics: DynamicsSection,
    #[serde(default)]
    pub reweighting: ReweightSection,
    #[serde(default = "defaults::seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            environment: defaults::environment(),
            dynamics: DynamicsSection::default(),
            reweighting: ReweightSection::default(),
            seeds: defaults::seeds(),
            output_dir: defaults::output_dir(),
        }
    }
}

mod defaults {
    use super::*;

    pub fn eta() -> f64 {
        0.2
    }
    pub fn rounds() -> usize {
        3000
    }
    pub fn acceptance_point() -> AcceptancePoint {
        AcceptancePoint::PreProjection
    }
    pub fn enabled() -> bool {
        true
    }
    pub fn epochs() -> usize {
        600
    }
    pub fn epoch_len() -> usize {
        5
    }
    pub fn alpha() -> AlphaSchedule {
        AlphaSchedule::paper()
    }
    pub fn w_min() -> f64 {
        crate::intervention::DEFAULT_W_MIN
    }
    pub fn w_max() -> f64 {
        crate::intervention::DEFAULT_W_MAX
    }
    pub fn mechanism() -> MechanismKind {
        MechanismKind::None
    }
    pub fn weight_map() -> WeightMap {
        WeightMap::ScaleBase
    }
    pub fn utility_hook() -> UtilityHook {
        UtilityHook::ExpectedRelevance
    }
    pub fn environment() -> EnvSelector {
        EnvSelector::Synthetic
    }
    pub fn seeds() -> Vec<u64> {
        vec![0]
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("out")
    }
    pub fn embedding_creators() -> usize {
        20
    }
    pub fn shared_items() -> usize {
        700
    }
    pub fn private_items() -> usize {
        300
    }
}

impl RunConfig {
    /// Validates semantics, returning every violation at once.
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        if !(self.dynamics.eta > 0.0) {
            violations.push(format!("dynamics.eta must be positive, got {}", self.dynamics.eta));
        }
        if self.dynamics.rounds == 0 {
            violations.push("dynamics.rounds must be at least 1".into());
        }
        if self.seeds.is_empty() {
            violations.push("seeds must be non-empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            violations.push("seeds must be distinct".into());
        }
        let rw = &self.reweighting;
        if rw.enabled {
            if rw.epochs == 0 || rw.epoch_len == 0 {
                violations.push("reweighting.epochs and reweighting.epoch_len must be at least 1".into());
            } else if rw.epochs * rw.epoch_len != self.dynamics.rounds {
                violations.push(format!(
                    "T = E*M violated: dynamics.rounds = {} but reweighting.epochs * \
                     reweighting.epoch_len = {} * {} = {}",
                    self.dynamics.rounds,
                    rw.epochs,
                    rw.epoch_len,
                    rw.epochs * rw.epoch_len
                ));
            }
            if !(rw.w_min > 0.0 && rw.w_min <= rw.w_max) {
                violations.push(format!(
                    "reweighting clip bounds invalid: w_min = {}, w_max = {}",
                    rw.w_min, rw.w_max
                ));
            }
            if rw.groups == Some(0) {
                violations.push("reweighting.groups must be at least 1".into());
            }
            let (neg, label) = match rw.alpha {
                AlphaSchedule::Constant { alpha } => (alpha < 0.0, format!("{alpha}")),
                AlphaSchedule::TwoPhase { first, second } => {
                    (first < 0.0 || second < 0.0, format!("{first}/{second}"))
                }
            };
            if neg {
                violations.push(format!("alpha schedule values must be nonnegative, got {label}"));
            }
            if let Some(w) = &rw.initial_weights {
                if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                    violations.push("reweighting.initial_weights must be positive finite".into());
                }
                if let Some(l) = rw.groups {
                    if w.len() != l {
                        violations.push(format!(
                            "reweighting.initial_weights has {} entries for {} groups",
                            w.len(),
                            l
                        ));
                    }
                }
            }
        }
        if let EnvSelector::Embedding { n_creators, shared_items, private_items, .. } =
            &self.environment
        {
            if *n_creators == 0 {
                violations.push("environment.n_creators must be at least 1".into());
            }
            if shared_items + private_items == 0 {
                violations.push("environment catalog must contain at least one item".into());
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigValidation(violations))
        }
    }

    /// The group count `L` actually used: explicit setting, else the paper
    /// default per environment.
    pub fn effective_groups(&self) -> Option<usize> {
        if !self.reweighting.enabled {
            return None;
        }
        self.reweighting.groups.or(match self.environment {
            EnvSelector::FailureExample => None, // per-user groups built in
            EnvSelector::Synthetic => Some(20),
            EnvSelector::Embedding { .. } => Some(15),
        })
    }

    /// Builds the environment for one master seed, including the k-means
    /// group assignment when reweighting is active.
    pub fn build_env(&self, seed: u64) -> Result<EnvironmentSpec> {
        let mut env = match &self.environment {
            EnvSelector::FailureExample => env::failure_example_env(seed),
            EnvSelector::Synthetic => env::gen_synthetic(seed),
            EnvSelector::Embedding {
                user_file,
                item_file,
                n_creators,
                shared_items,
                private_items,
            } => {
                let config = env::EmbeddingEnvConfig {
                    n_creators: *n_creators,
                    shared_items: *shared_items,
                    private_items: *private_items,
                    matching: MatchingParams { k: 20, beta: 0.1 },
                    seed,
                };
                env::load_embedding_env(user_file, item_file, &config)?
            }
        };
        if let Some(l) = self.effective_groups() {
            env::kmeans_groups(&mut env.population, l, seed, 100)?;
        }
        env.validate()?;
        Ok(env)
    }
}

/// Parses a JSON config file; unknown keys and semantic violations are all
/// collected into a single [`Error::ConfigValidation`].
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let content =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config_str(&content)
}

pub fn parse_config_str(content: &str) -> Result<RunConfig> {
    let mut unknown = Vec::new();
    let mut de = serde_json::Deserializer::from_str(content);
    let config: RunConfig = serde_ignored::deserialize(&mut de, |path| {
        unknown.push(format!("unknown key `{path}`"));
    })?;
    match config.validate() {
        Ok(()) if unknown.is_empty() => Ok(config),
        Ok(()) => Err(Error::ConfigValidation(unknown)),
        Err(Error::ConfigValidation(mut violations)) => {
            unknown.append(&mut violations);
            Err(Error::ConfigValidation(unknown))
        }
        Err(e) => Err(e),
    }
}

/// CLI flag overrides, applied on top of file values (flag > config >
/// default).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub eta: Option<f64>,
    pub rounds: Option<usize>,
    pub epochs: Option<usize>,
    pub epoch_len: Option<usize>,
    pub groups: Option<usize>,
    pub mechanism: Option<MechanismKind>,
    pub seeds: Option<Vec<u64>>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn apply_overrides(&mut self, overrides: &Overrides) {
        if let Some(v) = overrides.eta {
            self.dynamics.eta = v;
        }
        if let Some(v) = overrides.rounds {
            self.dynamics.rounds = v;
        }
        if let Some(v) = overrides.epochs {
            self.reweighting.epochs = v;
        }
        if let Some(v) = overrides.epoch_len {
            self.reweighting.epoch_len = v;
        }
        if let Some(v) = overrides.groups {
            self.reweighting.groups = Some(v);
        }
        if let Some(v) = overrides.mechanism {
            self.reweighting.mechanism = v;
        }
        if let Some(v) = &overrides.seeds {
            self.seeds = v.clone();
        }
        if let Some(v) = &overrides.output_dir {
            self.output_dir = v.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_paper() {
        let config = RunConfig::default();
        assert_eq!(config.dynamics.eta, 0.2);
        assert_eq!(config.dynamics.rounds, 3000);
        assert_eq!(config.reweighting.epochs, 600);
        assert_eq!(config.reweighting.epoch_len, 5);
        assert_eq!(config.reweighting.w_min, 0.2);
        assert_eq!(config.reweighting.w_max, 5.0);
        assert_eq!(config.effective_groups(), Some(20));
        config.validate().unwrap();
    }

    #[test]
    fn omitted_eta_defaults() {
        let config = parse_config_str(r#"{"seeds": [1, 2]}"#).unwrap();
        assert_eq!(config.dynamics.eta, 0.2);
        assert_eq!(config.seeds, vec![1, 2]);
    }

    #[test]
    fn t_equals_e_times_m() {
        let good = r#"{"dynamics": {"rounds": 3000},
                       "reweighting": {"epochs": 600, "epoch_len": 5}}"#;
        parse_config_str(good).unwrap();

        let bad = r#"{"dynamics": {"rounds": 3000},
                      "reweighting": {"epochs": 100, "epoch_len": 5}}"#;
        let err = parse_config_str(bad).unwrap_err();
        match err {
            Error::ConfigValidation(v) => {
                assert!(v.iter().any(|s| s.contains("T = E*M")), "{v:?}");
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn all_violations_reported_at_once() {
        let bad = r#"{"dynamics": {"eta": -1.0, "rounds": 7, "typo_key": 3},
                      "reweighting": {"epochs": 2, "epoch_len": 2},
                      "seeds": [1, 1],
                      "mystery": true}"#;
        let err = parse_config_str(bad).unwrap_err();
        match err {
            Error::ConfigValidation(v) => {
                let joined = v.join("\n");
                assert!(joined.contains("dynamics.typo_key"), "{joined}");
                assert!(joined.contains("mystery"), "{joined}");
                assert!(joined.contains("eta"), "{joined}");
                assert!(joined.contains("distinct"), "{joined}");
                assert!(joined.contains("T = E*M"), "{joined}");
                assert!(v.len() >= 5);
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn overrides_take_precedence() {
        let mut config = parse_config_str(r#"{"dynamics": {"eta": 0.4}}"#).unwrap();
        config.apply_overrides(&Overrides {
            eta: Some(0.1),
            seeds: Some(vec![5, 6]),
            mechanism: Some(MechanismKind::Smt),
            ..Default::default()
        });
        assert_eq!(config.dynamics.eta, 0.1);
        assert_eq!(config.seeds, vec![5, 6]);
        assert_eq!(config.reweighting.mechanism, MechanismKind::Smt);
    }

    #[test]
    fn config_roundtrip() {
        let config = RunConfig::default();
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back = parse_config_str(&json).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn build_failure_example_env() {
        let config = RunConfig {
            environment: EnvSelector::FailureExample,
            ..Default::default()
        };
        let env = config.build_env(3).unwrap();
        assert_eq!(env.population.len(), 5);
        // Counterexample keeps its built-in per-user groups.
        assert_eq!(env.population.num_groups(), 5);
    }
}
