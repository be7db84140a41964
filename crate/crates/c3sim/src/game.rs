//! Core game model: users, creators, relevance scoring, top-K softmax
//! matching, welfare and creator utilities.
//!
//! Everything in this module is a pure function of immutable inputs and
//! computes exact expectations over the finite user support; no sampling
//! is involved. The dynamics module keeps an incremental cache for speed,
//! which is property-tested against the reference implementations here.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite-support user population with group assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPopulation {
    /// `m` user embeddings in `R^d`.
    pub embeddings: Vec<Vec<f64>>,
    /// Group index per user, values in `[0, L)`.
    pub group_of: Vec<usize>,
    /// Size of each of the `L` groups; sums to `m`.
    pub group_sizes: Vec<usize>,
    /// Per-user probability mass; sums to 1.
    pub mass: Vec<f64>,
}

impl UserPopulation {
    /// Uniform-mass population with every user in a single group.
    pub fn uniform(embeddings: Vec<Vec<f64>>) -> Result<Self> {
        let m = embeddings.len();
        if m == 0 {
            return Err(Error::InvalidPopulation("empty user support".into()));
        }
        let pop = UserPopulation {
            embeddings,
            group_of: vec![0; m],
            group_sizes: vec![m],
            mass: vec![1.0 / m as f64; m],
        };
        pop.validate()?;
        Ok(pop)
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, |e| e.len())
    }

    pub fn num_groups(&self) -> usize {
        self.group_sizes.len()
    }

    /// Replace the group assignment, recomputing group sizes.
    pub fn set_groups(&mut self, group_of: Vec<usize>, num_groups: usize) -> Result<()> {
        if group_of.len() != self.len() {
            return Err(Error::InvalidPopulation(format!(
                "group assignment has {} entries for {} users",
                group_of.len(),
                self.len()
            )));
        }
        let mut sizes = vec![0usize; num_groups];
        for &g in &group_of {
            if g >= num_groups {
                return Err(Error::InvalidPopulation(format!(
                    "group index {g} out of range [0, {num_groups})"
                )));
            }
            sizes[g] += 1;
        }
        self.group_of = group_of;
        self.group_sizes = sizes;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.len();
        if m == 0 {
            return Err(Error::InvalidPopulation("empty user support".into()));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidPopulation("zero-dimensional embeddings".into()));
        }
        if self.embeddings.iter().any(|e| e.len() != d) {
            return Err(Error::InvalidPopulation(
                "inconsistent embedding dimensions".into(),
            ));
        }
        if self.group_of.len() != m || self.mass.len() != m {
            return Err(Error::InvalidPopulation(
                "group_of and mass must have one entry per user".into(),
            ));
        }
        let l = self.group_sizes.len();
        if self.group_of.iter().any(|&g| g >= l) {
            return Err(Error::InvalidPopulation("group index out of range".into()));
        }
        if self.group_sizes.iter().sum::<usize>() != m {
            return Err(Error::InvalidPopulation(
                "group sizes do not sum to the population size".into(),
            ));
        }
        let total: f64 = self.mass.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidPopulation(format!(
                "user masses sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// A creator's feasible strategy region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategySet {
    /// Euclidean ball of the given radius around a center.
    Ball { radius: f64, center: Vec<f64> },
    /// Indices into a shared item embedding table.
    Catalog { indices: Vec<usize> },
}

impl StrategySet {
    /// Membership check; `items` is the shared embedding table, required for
    /// catalog sets. Ball membership uses a 1e-9 slack.
    pub fn contains(&self, strategy: &[f64], items: &[Vec<f64>]) -> bool {
        match self {
            StrategySet::Ball { radius, center } => {
                squared_distance(strategy, center).sqrt() <= radius + 1e-9
            }
            StrategySet::Catalog { indices } => indices
                .iter()
                .any(|&i| items.get(i).is_some_and(|item| item[..] == strategy[..])),
        }
    }

    pub fn validate(&self, items: &[Vec<f64>]) -> Result<()> {
        match self {
            StrategySet::Ball { radius, .. } => {
                if *radius <= 0.0 {
                    return Err(Error::InvalidEnvironment(format!(
                        "ball strategy set with non-positive radius {radius}"
                    )));
                }
            }
            StrategySet::Catalog { indices } => {
                if indices.is_empty() {
                    return Err(Error::EmptyCatalog);
                }
                for &i in indices {
                    if i >= items.len() {
                        return Err(Error::CatalogIndexOutOfBounds {
                            index: i,
                            table_size: items.len(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// A creator's current strategy plus its feasible set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatorState {
    pub strategy: Vec<f64>,
    pub strategy_set: StrategySet,
}

/// Parametric relevance score between content and users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RelevanceModel {
    /// `max{c0 - ||s - x|| / c1, 0}`.
    TruncatedLinearDistance { c0: f64, c1: f64 },
    /// `(s^T x - offset) / scale`.
    DotProduct { offset: f64, scale: f64 },
}

/// Matching capacity and softmax temperature.
///
/// `beta = 0` is the deterministic argmax limit; `beta = f64::INFINITY` is
/// the uniform-over-top-K limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchingParams {
    pub k: usize,
    #[serde(with = "crate::serde_util::maybe_inf")]
    pub beta: f64,
}

/// Post-matching reward assigned by the platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardScheme {
    /// Reward equals the relevance score.
    Engagement,
    /// Unit reward per matched request.
    Traffic,
}

impl RewardScheme {
    #[inline]
    pub fn reward(&self, sigma: f64) -> f64 {
        match self {
            RewardScheme::Engagement => sigma,
            RewardScheme::Traffic => 1.0,
        }
    }
}

/// Per-user effective parameters after a mechanism deployment.
///
/// The baseline is `reward_scale = 1` with the environment's matching
/// parameters; UIR changes `reward_scale`, SMT changes `beta`, HMT changes
/// `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserAdjustment {
    pub reward_scale: f64,
    #[serde(with = "crate::serde_util::maybe_inf")]
    pub beta: f64,
    pub k: usize,
}

impl UserAdjustment {
    pub fn baseline(params: MatchingParams) -> Self {
        UserAdjustment {
            reward_scale: 1.0,
            beta: params.beta,
            k: params.k,
        }
    }
}

/// One baseline adjustment per user.
pub fn baseline_adjustments(params: MatchingParams, m: usize) -> Vec<UserAdjustment> {
    vec![UserAdjustment::baseline(params); m]
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Relevance score `sigma(s, x)`.
pub fn relevance(model: &RelevanceModel, s: &[f64], x: &[f64]) -> Result<f64> {
    if s.len() != x.len() {
        return Err(Error::DimensionMismatch {
            left: s.len(),
            right: x.len(),
        });
    }
    Ok(match model {
        RelevanceModel::TruncatedLinearDistance { c0, c1 } => {
            (c0 - squared_distance(s, x).sqrt() / c1).max(0.0)
        }
        RelevanceModel::DotProduct { offset, scale } => (dot(s, x) - offset) / scale,
    })
}

/// Comparator for ranking creators: descending score, ties broken by
/// ascending creator index.
#[inline]
pub fn rank_cmp(a: (f64, usize), b: (f64, usize)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Indices of the `K` largest scores, in descending score order.
pub fn top_k_set(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    let n = scores.len();
    if k > n || k == 0 {
        return Err(Error::CapacityExceedsCreators { k, n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| rank_cmp((scores[a], a), (scores[b], b)));
    idx.truncate(k);
    Ok(idx)
}

/// Matching distribution over creators for one user request.
///
/// Entries outside the top-K set are exactly zero; inside, probabilities are
/// softmax with temperature `beta` computed with a subtracted maximum.
pub fn match_distribution(scores: &[f64], params: &MatchingParams) -> Result<Vec<f64>> {
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::NonFiniteScore { index: i, value: s });
        }
    }
    let top = top_k_set(scores, params.k)?;
    let mut probs = vec![0.0; scores.len()];
    if params.beta == 0.0 {
        // Argmax limit; the tie-broken maximum is first in the top set.
        probs[top[0]] = 1.0;
    } else if params.beta.is_infinite() {
        let p = 1.0 / top.len() as f64;
        for &i in &top {
            probs[i] = p;
        }
    } else {
        let max = scores[top[0]];
        let mut denom = 0.0;
        for &i in &top {
            let e = ((scores[i] - max) / params.beta).exp();
            probs[i] = e;
            denom += e;
        }
        for &i in &top {
            probs[i] /= denom;
        }
    }
    Ok(probs)
}

/// Exact expected utility of a single user request: `sum_i sigma_i P_i`.
pub fn user_expected_utility(
    creators: &[CreatorState],
    x: &[f64],
    model: &RelevanceModel,
    params: &MatchingParams,
) -> Result<f64> {
    let scores: Vec<f64> = creators
        .iter()
        .map(|c| relevance(model, &c.strategy, x))
        .collect::<Result<_>>()?;
    let probs = match_distribution(&scores, params)?;
    Ok(scores.iter().zip(&probs).map(|(s, p)| s * p).sum())
}

/// User welfare: mass-weighted expected matched relevance over the support.
pub fn welfare(
    creators: &[CreatorState],
    population: &UserPopulation,
    model: &RelevanceModel,
    params: &MatchingParams,
) -> Result<f64> {
    let mut w = 0.0;
    for (x, &mass) in population.embeddings.iter().zip(&population.mass) {
        w += mass * user_expected_utility(creators, x, model, params)?;
    }
    Ok(w)
}

/// Welfare under a deployed mechanism (per-user matching parameters).
///
/// Reward scaling does not enter welfare; only the matching side does.
pub fn welfare_deployed(
    creators: &[CreatorState],
    population: &UserPopulation,
    model: &RelevanceModel,
    adjustments: &[UserAdjustment],
) -> Result<f64> {
    let n = creators.len();
    let mut w = 0.0;
    for (j, (x, &mass)) in population
        .embeddings
        .iter()
        .zip(&population.mass)
        .enumerate()
    {
        let params = MatchingParams {
            k: effective_k(adjustments[j].k, n),
            beta: adjustments[j].beta,
        };
        w += mass * user_expected_utility(creators, x, model, &params)?;
    }
    Ok(w)
}

/// Clamp a mapped truncation level into `[1, n]`, logging when it exceeds
/// the creator count.
pub fn effective_k(k: usize, n: usize) -> usize {
    if k > n {
        warn!("HMT truncation level {k} exceeds creator count {n}; clamped");
        n
    } else {
        k.max(1)
    }
}

/// Exact expected utility of creator `i` under per-user adjustments.
///
/// Covers the baseline and all three mechanisms: UIR scales the
/// post-matching reward by `reward_scale`, SMT and HMT act through the
/// per-user `beta` and `k`.
pub fn creator_utility(
    i: usize,
    creators: &[CreatorState],
    population: &UserPopulation,
    model: &RelevanceModel,
    reward: &RewardScheme,
    adjustments: &[UserAdjustment],
) -> Result<f64> {
    creator_utility_with_strategy(i, &creators[i].strategy, creators, population, model, reward, adjustments)
}

/// Like [`creator_utility`], but evaluates creator `i` at a hypothetical
/// strategy while all other creators keep theirs.
pub fn creator_utility_with_strategy(
    i: usize,
    strategy: &[f64],
    creators: &[CreatorState],
    population: &UserPopulation,
    model: &RelevanceModel,
    reward: &RewardScheme,
    adjustments: &[UserAdjustment],
) -> Result<f64> {
    let n = creators.len();
    let mut u = 0.0;
    for (j, (x, &mass)) in population
        .embeddings
        .iter()
        .zip(&population.mass)
        .enumerate()
    {
        let adj = &adjustments[j];
        let mut scores = Vec::with_capacity(n);
        for (l, c) in creators.iter().enumerate() {
            let s = if l == i { strategy } else { &c.strategy[..] };
            scores.push(relevance(model, s, x)?);
        }
        let params = MatchingParams {
            k: effective_k(adj.k, n),
            beta: adj.beta,
        };
        let probs = match_distribution(&scores, &params)?;
        u += mass * adj.reward_scale * reward.reward(scores[i]) * probs[i];
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn trunc(c0: f64, c1: f64) -> RelevanceModel {
        RelevanceModel::TruncatedLinearDistance { c0, c1 }
    }

    #[test]
    fn relevance_truncated_linear() {
        let m = trunc(2.0, 1.0);
        assert_eq!(relevance(&m, &[0.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(relevance(&m, &[0.3, -0.2], &[0.3, -0.2]).unwrap(), 2.0);
        let m = trunc(1.0, 3.0);
        assert_eq!(relevance(&m, &[0.0], &[3.0]).unwrap(), 0.0);
    }

    #[test]
    fn relevance_dimension_mismatch() {
        let m = trunc(2.0, 1.0);
        let err = relevance(&m, &[0.0, 0.0], &[1.0]).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch { left: 2, right: 1 }
        ));
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_set(&[0.1, 0.9, 0.5], 2).unwrap(), vec![1, 2]);
        assert_eq!(top_k_set(&[0.5, 0.5, 0.5], 2).unwrap(), vec![0, 1]);
        assert_eq!(top_k_set(&[0.3], 1).unwrap(), vec![0]);
        assert!(top_k_set(&[0.3], 2).is_err());
    }

    #[test]
    fn match_distribution_limits() {
        let p = match_distribution(&[1.0, 0.0], &MatchingParams { k: 2, beta: f64::INFINITY })
            .unwrap();
        assert_eq!(p, vec![0.5, 0.5]);

        let p = match_distribution(&[0.9, 0.5, 0.1], &MatchingParams { k: 2, beta: 0.0 }).unwrap();
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn match_distribution_softmax_hand_value() {
        // exp(1)/(exp(1)+exp(0)) computed directly from the softmax definition.
        let e = 1f64.exp();
        let p = match_distribution(&[1.0, 0.0], &MatchingParams { k: 2, beta: 1.0 }).unwrap();
        assert_abs_diff_eq!(p[0], e / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 1.0 / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.73106, epsilon = 1e-5);
    }

    #[test]
    fn match_distribution_rejects_non_finite() {
        let err = match_distribution(&[f64::NAN, 0.0], &MatchingParams { k: 1, beta: 1.0 })
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteScore { index: 0, .. }));
    }

    fn ball_creator(strategy: Vec<f64>) -> CreatorState {
        let center = vec![0.0; strategy.len()];
        CreatorState {
            strategy,
            strategy_set: StrategySet::Ball { radius: 10.0, center },
        }
    }

    /// Creators pinned on the five users of the small counterexample layout.
    fn counterexample_creators() -> (Vec<CreatorState>, Vec<Vec<f64>>) {
        let users = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
        ];
        let creators = users.iter().cloned().map(ball_creator).collect();
        (creators, users)
    }

    #[test]
    fn user_utility_single_creator() {
        let c = vec![ball_creator(vec![0.5, 0.0])];
        let model = trunc(2.0, 1.0);
        let params = MatchingParams { k: 1, beta: 0.7 };
        let u = user_expected_utility(&c, &[1.0, 0.0], &model, &params).unwrap();
        assert_abs_diff_eq!(u, 1.5, epsilon = 1e-15);
    }

    #[test]
    fn user_utility_equal_scores() {
        let c = vec![ball_creator(vec![0.5, 0.0]), ball_creator(vec![1.5, 0.0])];
        let model = trunc(2.0, 1.0);
        for beta in [0.0, 0.3, 5.0, f64::INFINITY] {
            let params = MatchingParams { k: 2, beta };
            let u = user_expected_utility(&c, &[1.0, 0.0], &model, &params).unwrap();
            assert_abs_diff_eq!(u, 1.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn user_utility_counterexample_center_user() {
        let (creators, _) = counterexample_creators();
        let model = trunc(2.0, 1.0);
        let params = MatchingParams { k: 3, beta: 10.0 };
        let u = user_expected_utility(&creators, &[0.0, 0.0], &model, &params).unwrap();
        // Hand enumeration: scores {2,1,1,1,1}, top-3 {2,1,1} by index tie-break.
        let (a, b) = ((0.2f64).exp(), (0.1f64).exp());
        let expected = (2.0 * a + 2.0 * b) / (a + 2.0 * b);
        assert_abs_diff_eq!(u, expected, epsilon = 1e-14);
        assert_abs_diff_eq!(u, 1.3559, epsilon = 1e-4);
    }

    #[test]
    fn welfare_perfect_match() {
        let users = vec![vec![0.2, 0.1], vec![0.2, 0.1]];
        let pop = UserPopulation::uniform(users).unwrap();
        let c = vec![ball_creator(vec![0.2, 0.1])];
        let w = welfare(&c, &pop, &trunc(1.0, 3.0), &MatchingParams { k: 1, beta: 0.5 }).unwrap();
        assert_abs_diff_eq!(w, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn welfare_counterexample_pne() {
        let (creators, users) = counterexample_creators();
        let pop = UserPopulation::uniform(users).unwrap();
        let model = trunc(2.0, 1.0);
        let params = MatchingParams { k: 3, beta: 10.0 };
        let w = welfare(&creators, &pop, &model, &params).unwrap();
        // Symmetry: (center + 4 * outer) / 5, each term enumerated directly.
        let center = user_expected_utility(&creators, &pop.embeddings[0], &model, &params).unwrap();
        let outer = user_expected_utility(&creators, &pop.embeddings[1], &model, &params).unwrap();
        assert_abs_diff_eq!(w, (center + 4.0 * outer) / 5.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w, 1.2560, epsilon = 1e-4);
        assert_abs_diff_eq!(outer, 1.2310, epsilon = 1e-4);
    }

    #[test]
    fn welfare_empty_overlap() {
        let pop = UserPopulation::uniform(vec![vec![0.0, 0.0]]).unwrap();
        let c = vec![ball_creator(vec![5.0, 0.0])];
        let w = welfare(&c, &pop, &trunc(1.0, 3.0), &MatchingParams { k: 1, beta: 1.0 }).unwrap();
        assert_eq!(w, 0.0);
    }

    #[test]
    fn creator_utility_traffic_symmetry() {
        let (creators, users) = counterexample_creators();
        let n = creators.len();
        // All creators at the same point: all scores equal, K = n.
        let creators: Vec<_> = (0..n).map(|_| ball_creator(vec![0.1, 0.1])).collect();
        let pop = UserPopulation::uniform(users).unwrap();
        let model = trunc(2.0, 1.0);
        let adj = baseline_adjustments(MatchingParams { k: n, beta: 0.4 }, pop.len());
        for i in 0..n {
            let u = creator_utility(i, &creators, &pop, &model, &RewardScheme::Traffic, &adj)
                .unwrap();
            assert_abs_diff_eq!(u, 1.0 / n as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn creator_utility_uir_half_weight() {
        let pop = UserPopulation::uniform(vec![vec![0.3, 0.0]]).unwrap();
        let creators = vec![ball_creator(vec![0.0, 0.0]), ball_creator(vec![0.6, 0.0])];
        let model = trunc(2.0, 1.0);
        let params = MatchingParams { k: 2, beta: 0.5 };
        let base = baseline_adjustments(params, 1);
        let mut halved = base.clone();
        halved[0].reward_scale = 0.5;
        for i in 0..2 {
            let u0 = creator_utility(i, &creators, &pop, &model, &RewardScheme::Engagement, &base)
                .unwrap();
            let u1 =
                creator_utility(i, &creators, &pop, &model, &RewardScheme::Engagement, &halved)
                    .unwrap();
            assert_abs_diff_eq!(u1, 0.5 * u0, epsilon = 1e-15);
        }
    }

    #[test]
    fn creator_utility_hmt_truncation() {
        // K(w) = ceil(20 * 0.6) = 12: with 20 creators, only the top 12 by
        // score get matched for that user.
        let k_mapped = (20.0f64 * 0.6).ceil() as usize;
        assert_eq!(k_mapped, 12);
        let users = vec![vec![0.0, 0.0]];
        let pop = UserPopulation::uniform(users).unwrap();
        let creators: Vec<_> = (0..20)
            .map(|i| ball_creator(vec![i as f64 * 0.05, 0.0]))
            .collect();
        let model = trunc(2.0, 1.0);
        let mut adj = baseline_adjustments(MatchingParams { k: 20, beta: 0.3 }, 1);
        adj[0].k = k_mapped;
        // Creators ranked by distance: index 0 is closest. Index 12 and
        // beyond fall outside the truncated set.
        let u11 = creator_utility(11, &creators, &pop, &model, &RewardScheme::Engagement, &adj)
            .unwrap();
        let u12 = creator_utility(12, &creators, &pop, &model, &RewardScheme::Engagement, &adj)
            .unwrap();
        assert!(u11 > 0.0);
        assert_eq!(u12, 0.0);
    }

    #[test]
    fn effective_k_clamps() {
        assert_eq!(effective_k(25, 20), 20);
        assert_eq!(effective_k(12, 20), 12);
        assert_eq!(effective_k(0, 20), 1);
    }

    #[test]
    fn strategy_set_membership() {
        let ball = StrategySet::Ball { radius: 1.0, center: vec![0.0, 0.0] };
        assert!(ball.contains(&[0.6, 0.8], &[]));
        assert!(!ball.contains(&[0.8, 0.8], &[]));
        let items = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let cat = StrategySet::Catalog { indices: vec![1] };
        assert!(cat.contains(&[1.0, 1.0], &items));
        assert!(!cat.contains(&[0.0, 0.0], &items));
    }
}
