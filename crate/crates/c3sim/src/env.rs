//! Game-instance builders: the small hand-built counterexample, the
//! clustered synthetic population, embedding-file environments, and
//! k-means user grouping.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use log::warn;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    dot, relevance, squared_distance, CreatorState, MatchingParams, RelevanceModel, RewardScheme,
    StrategySet, UserPopulation,
};

pub const ENV_SCHEMA_VERSION: u32 = 1;

/// A fully specified game instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub schema_version: u32,
    /// Free-text description of how the instance was built.
    pub provenance: String,
    pub seed: u64,
    pub population: UserPopulation,
    pub creators: Vec<CreatorState>,
    /// Shared item embedding table for catalog strategy sets; empty for
    /// continuous environments.
    pub items: Vec<Vec<f64>>,
    pub relevance: RelevanceModel,
    pub matching: MatchingParams,
    pub reward: RewardScheme,
}

impl EnvironmentSpec {
    pub fn num_creators(&self) -> usize {
        self.creators.len()
    }

    pub fn dim(&self) -> usize {
        self.population.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        let d = self.dim();
        if self.creators.is_empty() {
            return Err(Error::InvalidEnvironment("no creators".into()));
        }
        for (i, c) in self.creators.iter().enumerate() {
            if c.strategy.len() != d {
                return Err(Error::DimensionMismatch {
                    left: c.strategy.len(),
                    right: d,
                });
            }
            c.strategy_set.validate(&self.items)?;
            if !c.strategy_set.contains(&c.strategy, &self.items) {
                return Err(Error::InvalidEnvironment(format!(
                    "creator {i} strategy lies outside its strategy set"
                )));
            }
        }
        for item in &self.items {
            if item.len() != d {
                return Err(Error::DimensionMismatch {
                    left: item.len(),
                    right: d,
                });
            }
        }
        if self.matching.k == 0 || self.matching.k > self.creators.len() {
            return Err(Error::CapacityExceedsCreators {
                k: self.matching.k,
                n: self.creators.len(),
            });
        }
        if self.matching.beta < 0.0 {
            return Err(Error::InvalidEnvironment("negative matching temperature".into()));
        }
        self.warn_sigma_range();
        Ok(())
    }

    /// The relevance range is nominally [0, 1], but the small
    /// counterexample intentionally uses a model with range [0, 2]; out of
    /// range values only produce a warning.
    fn warn_sigma_range(&self) {
        match &self.relevance {
            RelevanceModel::TruncatedLinearDistance { c0, .. } => {
                if *c0 > 1.0 {
                    warn!("relevance range [0, {c0}] exceeds the nominal [0, 1]");
                }
            }
            RelevanceModel::DotProduct { .. } => {
                if !self.items.is_empty() {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for x in &self.population.embeddings {
                        for item in &self.items {
                            let v = relevance(&self.relevance, item, x).unwrap_or(f64::NAN);
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                    if lo < -1e-9 || hi > 1.0 + 1e-9 {
                        warn!(
                            "dot-product relevance covers [{lo:.4}, {hi:.4}] over the catalog, \
                             outside the nominal [0, 1]"
                        );
                    }
                }
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let env: EnvironmentSpec = serde_json::from_str(s)?;
        env.validate()?;
        Ok(env)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::runner::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&s)
    }
}

fn sample_unit_sphere(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

/// The five-user, five-creator instance where local dynamics get trapped
/// around the central user.
pub fn failure_example_env(seed: u64) -> EnvironmentSpec {
    failure_example_env_with(seed, [0.0, -0.1], [1.0, 0.1])
}

/// Same instance with a custom rectangle for the initial strategies.
pub fn failure_example_env_with(seed: u64, lo: [f64; 2], hi: [f64; 2]) -> EnvironmentSpec {
    let users = vec![
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![-1.0, 0.0],
        vec![0.0, -1.0],
    ];
    let m = users.len();
    let mut population = UserPopulation::uniform(users).unwrap();
    // One group per user so per-user weights can be set directly.
    population.set_groups((0..m).collect(), m).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let creators = (0..5)
        .map(|_| {
            let strategy = vec![
                rng.gen_range(lo[0]..hi[0]),
                rng.gen_range(lo[1]..hi[1]),
            ];
            CreatorState {
                strategy,
                // The action set is unconstrained in principle; a radius-10
                // ball never binds at this scale and keeps projection total.
                strategy_set: StrategySet::Ball { radius: 10.0, center: vec![0.0, 0.0] },
            }
        })
        .collect();

    EnvironmentSpec {
        schema_version: ENV_SCHEMA_VERSION,
        provenance: "failure-example".into(),
        seed,
        population,
        creators,
        items: Vec::new(),
        relevance: RelevanceModel::TruncatedLinearDistance { c0: 2.0, c1: 1.0 },
        // The temperature must be low enough that the matching is close to
        // deterministic: that is what makes crowding around the central
        // user sticky (a unilateral step away forfeits the match share),
        // while halving the central user's weight releases the trap.
        matching: MatchingParams { k: 3, beta: 0.3 },
        reward: RewardScheme::Engagement,
    }
}

/// Cluster sizes of the synthetic population (sums to 2000).
pub const SYNTHETIC_CLUSTER_SIZES: [usize; 10] =
    [1000, 500, 200, 100, 100, 50, 20, 10, 10, 10];

/// Clustered synthetic environment: 10 Gaussian user clusters of very
/// uneven sizes, 200 creators initialized near the largest cluster's
/// center.
pub fn gen_synthetic(seed: u64) -> EnvironmentSpec {
    let d = 5;
    let n = 200;
    let noise_std = 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let centers: Vec<Vec<f64>> = (0..SYNTHETIC_CLUSTER_SIZES.len())
        .map(|_| sample_unit_sphere(d, &mut rng))
        .collect();

    let mut embeddings = Vec::with_capacity(2000);
    let mut group_of = Vec::with_capacity(2000);
    for (g, (&size, center)) in SYNTHETIC_CLUSTER_SIZES.iter().zip(&centers).enumerate() {
        for _ in 0..size {
            let x: Vec<f64> = center
                .iter()
                .map(|&c| c + 0.5 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            embeddings.push(x);
            group_of.push(g);
        }
    }
    let mut population = UserPopulation::uniform(embeddings).unwrap();
    population
        .set_groups(group_of, SYNTHETIC_CLUSTER_SIZES.len())
        .unwrap();

    let largest = &centers[0];
    let creators = (0..n)
        .map(|_| {
            let mut s: Vec<f64> = largest
                .iter()
                .map(|&c| c + noise_std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = dot(&s, &s).sqrt();
            if norm > 1.0 {
                for v in &mut s {
                    *v /= norm;
                }
            }
            CreatorState {
                strategy: s,
                strategy_set: StrategySet::Ball { radius: 1.0, center: vec![0.0; d] },
            }
        })
        .collect();

    EnvironmentSpec {
        schema_version: ENV_SCHEMA_VERSION,
        provenance: "synthetic-clustered".into(),
        seed,
        population,
        creators,
        items: Vec::new(),
        relevance: RelevanceModel::TruncatedLinearDistance { c0: 1.0, c1: 3.0 },
        matching: MatchingParams { k: 20, beta: 0.1 },
        reward: RewardScheme::Engagement,
    }
}

/// Stylized environment for the weight-gradient direction check: users on
/// an orthogonal basis, dot-product relevance, traffic reward, K = n.
pub fn orthogonal_basis_env(seed: u64, n: usize) -> EnvironmentSpec {
    let d = 5;
    let users: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut population = UserPopulation::uniform(users).unwrap();
    population.set_groups((0..d).collect(), d).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let creators = (0..n)
        .map(|_| {
            // Clustered near the first basis vector: local dynamics then
            // settle in equilibria that leave some groups under-served,
            // which is the regime where weight perturbations matter.
            let mut s: Vec<f64> = (0..d)
                .map(|j| {
                    let noise: f64 = rng.sample(StandardNormal);
                    if j == 0 { 0.8 + 0.3 * noise } else { 0.3 * noise }
                })
                .collect();
            let norm = dot(&s, &s).sqrt();
            if norm > 1.0 {
                for v in &mut s {
                    *v /= norm;
                }
            }
            CreatorState {
                strategy: s,
                strategy_set: StrategySet::Ball { radius: 1.0, center: vec![0.0; d] },
            }
        })
        .collect();

    EnvironmentSpec {
        schema_version: ENV_SCHEMA_VERSION,
        provenance: "orthogonal-basis".into(),
        seed,
        population,
        creators,
        items: Vec::new(),
        relevance: RelevanceModel::DotProduct { offset: 0.0, scale: 1.0 },
        matching: MatchingParams { k: n, beta: 0.1 },
        reward: RewardScheme::Traffic,
    }
}

/// Parameters for building an environment from embedding files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingEnvConfig {
    pub n_creators: usize,
    /// Leading items of the item file shared by every creator's catalog
    /// (the file is assumed sorted by popularity).
    pub shared_items: usize,
    /// Items privately sampled per creator from the remainder of the file.
    pub private_items: usize,
    pub matching: MatchingParams,
    pub seed: u64,
}

impl Default for EmbeddingEnvConfig {
    fn default() -> Self {
        EmbeddingEnvConfig {
            n_creators: 20,
            shared_items: 700,
            private_items: 300,
            matching: MatchingParams { k: 20, beta: 0.1 },
            seed: 0,
        }
    }
}

/// Parses a `id,dim0,...,dim{d-1}` CSV of embeddings.
pub fn parse_embedding_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut content = String::new();
    file.read_to_string(&mut content)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_embedding_csv_str(&content, &path.display().to_string())
}

pub fn parse_embedding_csv_str(content: &str, file: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(content.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse { file: file.into(), line: 1, message: e.to_string() })?
        .clone();
    if headers.is_empty() || headers.get(0) != Some("id") {
        return Err(Error::Parse {
            file: file.into(),
            line: 1,
            message: "expected header starting with `id`".into(),
        });
    }
    let d = headers.len() - 1;
    if d == 0 {
        return Err(Error::Parse {
            file: file.into(),
            line: 1,
            message: "no embedding columns".into(),
        });
    }
    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    let mut vectors = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::Parse {
            file: file.into(),
            line,
            message: e.to_string(),
        })?;
        if record.len() != d + 1 {
            return Err(Error::Parse {
                file: file.into(),
                line,
                message: format!("expected {} fields, found {}", d + 1, record.len()),
            });
        }
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Parse {
                file: file.into(),
                line,
                message: format!("duplicate id `{id}`"),
            });
        }
        let mut v = Vec::with_capacity(d);
        for field in record.iter().skip(1) {
            let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
                file: file.into(),
                line,
                message: format!("cannot parse `{field}` as a float"),
            })?;
            v.push(value);
        }
        ids.push(id);
        vectors.push(v);
    }
    if vectors.is_empty() {
        return Err(Error::Parse {
            file: file.into(),
            line: 2,
            message: "no data rows".into(),
        });
    }
    Ok((ids, vectors))
}

/// Builds a catalog environment from user and item embedding files.
///
/// Each creator's catalog is the shared head of the item file plus a
/// private sample from the remainder; relevance is the dot product min-max
/// normalized to [0, 1] over the user-by-catalog score grid.
pub fn load_embedding_env(
    user_file: &Path,
    item_file: &Path,
    config: &EmbeddingEnvConfig,
) -> Result<EnvironmentSpec> {
    let (_uids, users) = parse_embedding_csv(user_file)?;
    let (_iids, items) = parse_embedding_csv(item_file)?;
    build_embedding_env(users, items, config)
}

pub fn build_embedding_env(
    users: Vec<Vec<f64>>,
    items: Vec<Vec<f64>>,
    config: &EmbeddingEnvConfig,
) -> Result<EnvironmentSpec> {
    let d = users.first().map_or(0, |u| u.len());
    if items.iter().any(|it| it.len() != d) {
        return Err(Error::DimensionMismatch {
            left: items.iter().map(|it| it.len()).find(|&l| l != d).unwrap_or(0),
            right: d,
        });
    }
    if config.shared_items + config.private_items > items.len() {
        return Err(Error::InvalidEnvironment(format!(
            "catalog needs {} shared + {} private items but the item file has {}",
            config.shared_items,
            config.private_items,
            items.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shared: Vec<usize> = (0..config.shared_items).collect();
    let tail: Vec<usize> = (config.shared_items..items.len()).collect();

    // Private samples are drawn independently per creator; overlap across
    // creators is allowed.
    let mut catalogs = Vec::with_capacity(config.n_creators);
    for _ in 0..config.n_creators {
        let private = tail
            .choose_multiple(&mut rng, config.private_items)
            .copied()
            .collect::<Vec<_>>();
        let mut catalog = shared.clone();
        catalog.extend(private);
        catalog.sort_unstable();
        catalogs.push(catalog);
    }

    // Min-max normalization over the user x catalog-union grid.
    let used: HashSet<usize> = catalogs.iter().flatten().copied().collect();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for x in &users {
        for &i in &used {
            let v = dot(&items[i], x);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !(hi - lo).is_finite() || hi - lo <= 0.0 {
        return Err(Error::InvalidEnvironment(
            "degenerate score grid: min-max normalization undefined".into(),
        ));
    }
    let relevance_model = RelevanceModel::DotProduct { offset: lo, scale: hi - lo };

    let population = UserPopulation::uniform(users)?;
    let creators = catalogs
        .into_iter()
        .map(|indices| {
            // Start from the catalog item with the highest mean normalized
            // score over the population.
            let best = indices
                .iter()
                .copied()
                .map(|i| {
                    let mean: f64 = population
                        .embeddings
                        .iter()
                        .map(|x| relevance(&relevance_model, &items[i], x).unwrap())
                        .sum::<f64>()
                        / population.len() as f64;
                    (i, mean)
                })
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            CreatorState {
                strategy: items[best].clone(),
                strategy_set: StrategySet::Catalog { indices },
            }
        })
        .collect();

    let env = EnvironmentSpec {
        schema_version: ENV_SCHEMA_VERSION,
        provenance: "embedding-files".into(),
        seed: config.seed,
        population,
        creators,
        items,
        relevance: relevance_model,
        matching: config.matching,
        reward: RewardScheme::Engagement,
    };
    env.validate()?;
    Ok(env)
}

/// Lloyd's algorithm with k-means++ seeding; empty clusters are repaired by
/// reassigning the point farthest from its centroid.
pub fn kmeans_groups(
    population: &mut UserPopulation,
    l: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Vec<usize>> {
    let m = population.len();
    if l == 0 || l > m {
        return Err(Error::TooManyClusters { l, m });
    }
    let points = &population.embeddings;
    let d = population.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(l);
    centers.push(points[rng.gen_range(0..m)].clone());
    let mut dist2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centers[0]))
        .collect();
    while centers.len() < l {
        let total: f64 = dist2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..m)
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = m - 1;
            for (i, &d2) in dist2.iter().enumerate() {
                target -= d2;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centers.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            let nd = squared_distance(p, centers.last().unwrap());
            if nd < dist2[i] {
                dist2[i] = nd;
            }
        }
    }

    let mut assignment = vec![0usize; m];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d2 = squared_distance(p, center);
                if d2 < best_d {
                    best_d = d2;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }

        // Recompute centroids; repair empty clusters with the point
        // farthest from its current centroid.
        let mut counts = vec![0usize; l];
        let mut sums = vec![vec![0.0; d]; l];
        for (i, p) in points.iter().enumerate() {
            counts[assignment[i]] += 1;
            for (s, &v) in sums[assignment[i]].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..l {
            if counts[c] == 0 {
                let farthest = (0..m)
                    .max_by(|&a, &b| {
                        squared_distance(&points[a], &centers[assignment[a]])
                            .total_cmp(&squared_distance(&points[b], &centers[assignment[b]]))
                    })
                    .unwrap();
                let old = assignment[farthest];
                counts[old] -= 1;
                for (s, &v) in sums[old].iter_mut().zip(&points[farthest]) {
                    *s -= v;
                }
                assignment[farthest] = c;
                counts[c] = 1;
                sums[c] = points[farthest].clone();
                changed = true;
            }
        }
        for c in 0..l {
            for (j, s) in sums[c].iter().enumerate() {
                centers[c][j] = s / counts[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }

    population.set_groups(assignment.clone(), l)?;
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{user_expected_utility, welfare};
    use approx::assert_abs_diff_eq;

    #[test]
    fn failure_example_shape() {
        let env = failure_example_env(7);
        env.validate().unwrap();
        assert_eq!(env.population.len(), 5);
        assert_eq!(env.num_creators(), 5);
        assert_eq!(env.matching.k, 3);
        assert_eq!(env.matching.beta, 0.3);
        // Initial strategies lie in the default rectangle between the
        // center and right users.
        for c in &env.creators {
            assert!(c.strategy[0] >= 0.0 && c.strategy[0] <= 1.0);
            assert!(c.strategy[1].abs() <= 0.1);
        }
    }

    #[test]
    fn failure_example_pne_welfare() {
        let mut env = failure_example_env(7);
        // Reference value derived at a high temperature where the top-3
        // shares stay close to uniform.
        env.matching.beta = 10.0;
        for (c, x) in env.creators.iter_mut().zip(&env.population.embeddings) {
            c.strategy = x.clone();
        }
        let w = welfare(&env.creators, &env.population, &env.relevance, &env.matching).unwrap();
        assert_abs_diff_eq!(w, 1.2560, epsilon = 1e-4);
    }

    #[test]
    fn synthetic_shape_and_determinism() {
        let env = gen_synthetic(3);
        env.validate().unwrap();
        assert_eq!(env.population.len(), 2000);
        assert_eq!(env.population.group_sizes, SYNTHETIC_CLUSTER_SIZES.to_vec());
        assert_eq!(env.num_creators(), 200);
        assert_eq!(env.matching.k, 20);
        assert_eq!(env.matching.beta, 0.1);
        for c in &env.creators {
            assert!(c.strategy_set.contains(&c.strategy, &env.items));
        }
        let env2 = gen_synthetic(3);
        assert_eq!(env, env2);
        let env3 = gen_synthetic(4);
        assert_ne!(env.population.embeddings[0], env3.population.embeddings[0]);
    }

    #[test]
    fn orthogonal_env_shape() {
        let env = orthogonal_basis_env(1, 100);
        env.validate().unwrap();
        assert_eq!(env.population.len(), 5);
        assert_eq!(env.dim(), 5);
        assert_eq!(env.matching.k, 100);
        // One creator per user being possible, expected utility is defined.
        user_expected_utility(
            &env.creators,
            &env.population.embeddings[0],
            &env.relevance,
            &env.matching,
        )
        .unwrap();
    }

    fn toy_csv(rows: &[(&str, &[f64])]) -> String {
        let d = rows[0].1.len();
        let mut s = String::from("id");
        for i in 0..d {
            s.push_str(&format!(",dim{i}"));
        }
        s.push('\n');
        for (id, v) in rows {
            s.push_str(id);
            for x in *v {
                s.push_str(&format!(",{x}"));
            }
            s.push('\n');
        }
        s
    }

    #[test]
    fn embedding_csv_parses_and_rejects() {
        let good = toy_csv(&[("u1", &[0.5, 1.0]), ("u2", &[1e-3, -2.0])]);
        let (ids, vecs) = parse_embedding_csv_str(&good, "test.csv").unwrap();
        assert_eq!(ids, vec!["u1", "u2"]);
        assert_eq!(vecs[1], vec![1e-3, -2.0]);

        let dup = toy_csv(&[("u1", &[0.5]), ("u1", &[0.6])]);
        let err = parse_embedding_csv_str(&dup, "test.csv").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");

        let bad = "id,dim0\nu1,abc\n";
        let err = parse_embedding_csv_str(bad, "test.csv").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    fn tiny_embedding_env() -> EnvironmentSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let users: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let items: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let config = EmbeddingEnvConfig {
            n_creators: 4,
            shared_items: 30,
            private_items: 10,
            matching: MatchingParams { k: 2, beta: 0.1 },
            seed: 11,
        };
        build_embedding_env(users, items, &config).unwrap()
    }

    #[test]
    fn embedding_env_catalogs_and_normalization() {
        let env = tiny_embedding_env();
        for c in &env.creators {
            match &c.strategy_set {
                StrategySet::Catalog { indices } => assert_eq!(indices.len(), 40),
                _ => panic!("expected catalog"),
            }
        }
        // Shared head present in every catalog.
        for c in &env.creators {
            if let StrategySet::Catalog { indices } = &c.strategy_set {
                for i in 0..30 {
                    assert!(indices.contains(&i));
                }
            }
        }
        // Normalized scores over the catalog union span exactly [0, 1].
        let used: std::collections::HashSet<usize> = env
            .creators
            .iter()
            .flat_map(|c| match &c.strategy_set {
                StrategySet::Catalog { indices } => indices.clone(),
                _ => vec![],
            })
            .collect();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in &env.population.embeddings {
            for &i in &used {
                let v = relevance(&env.relevance, &env.items[i], x).unwrap();
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        assert_abs_diff_eq!(lo, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn embedding_env_roundtrip() {
        let env = tiny_embedding_env();
        let json = env.to_json().unwrap();
        let back = EnvironmentSpec::from_json(&json).unwrap();
        assert_eq!(env, back);
    }

    #[test]
    fn kmeans_recovers_exact_clusters() {
        let points = vec![
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![5.0, 5.0],
            vec![5.0, 5.0],
            vec![-5.0, 5.0],
        ];
        let mut pop = UserPopulation::uniform(points).unwrap();
        kmeans_groups(&mut pop, 3, 0, 50).unwrap();
        assert_eq!(pop.group_of[0], pop.group_of[1]);
        assert_eq!(pop.group_of[2], pop.group_of[3]);
        assert_ne!(pop.group_of[0], pop.group_of[2]);
        assert_ne!(pop.group_of[0], pop.group_of[4]);
        assert!(pop.group_sizes.iter().all(|&s| s > 0));
    }

    #[test]
    fn kmeans_single_cluster_and_errors() {
        let mut pop = UserPopulation::uniform(vec![vec![1.0], vec![2.0]]).unwrap();
        kmeans_groups(&mut pop, 1, 0, 10).unwrap();
        assert_eq!(pop.group_of, vec![0, 0]);
        assert!(kmeans_groups(&mut pop, 3, 0, 10).is_err());
    }

    #[test]
    fn kmeans_no_empty_groups_on_synthetic() {
        let mut env = gen_synthetic(5);
        kmeans_groups(&mut env.population, 20, 1, 50).unwrap();
        assert_eq!(env.population.group_sizes.len(), 20);
        assert!(env.population.group_sizes.iter().all(|&s| s > 0));
    }
}
