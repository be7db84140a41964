//! Creators' local better-response dynamics: random-direction trial moves,
//! projection into strategy sets, round scheduling, and trace recording.
//!
//! Utility evaluations during a run go through [`MatchCache`], an
//! incrementally maintained per-user top-list structure. The cache is
//! semantically identical to the reference implementations in [`crate::game`]
//! (property-tested against them) but evaluates a candidate move in
//! `O(m (d + K))` instead of `O(m n)` score recomputations.

use rand::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::game::{
    effective_k, relevance, squared_distance, CreatorState, RelevanceModel, RewardScheme,
    StrategySet, UserAdjustment,
};

/// Where the acceptance test evaluates the trial utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptancePoint {
    /// Evaluate at `s + eta * g` before projecting (paper-literal).
    PreProjection,
    /// Evaluate at the projected candidate.
    PostProjection,
}

/// Configuration of the local better-response dynamics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LbrConfig {
    pub eta: f64,
    pub rng_seed: u64,
    pub acceptance_point: AcceptancePoint,
    pub rounds: usize,
}

impl Default for LbrConfig {
    fn default() -> Self {
        LbrConfig {
            eta: 0.2,
            rng_seed: 0,
            acceptance_point: AcceptancePoint::PreProjection,
            rounds: 1000,
        }
    }
}

/// Outcome of one trial move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub accepted: bool,
    /// Whether the accepted move strictly improved the utility.
    pub strict: bool,
}

/// Uniform random unit vector (isotropic Gaussian, normalized).
pub fn random_unit_direction(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return g.iter().map(|v| v / norm).collect();
        }
    }
}

/// Projects a candidate into a strategy set: radial scaling for balls,
/// nearest catalog item (ties to the lowest index) for catalogs.
pub fn project(candidate: &[f64], set: &StrategySet, items: &[Vec<f64>]) -> Result<Vec<f64>> {
    match set {
        StrategySet::Ball { radius, center } => {
            let dist = squared_distance(candidate, center).sqrt();
            if dist <= *radius {
                Ok(candidate.to_vec())
            } else {
                let scale = radius / dist;
                Ok(candidate
                    .iter()
                    .zip(center)
                    .map(|(v, c)| c + (v - c) * scale)
                    .collect())
            }
        }
        StrategySet::Catalog { indices } => {
            if indices.is_empty() {
                return Err(Error::EmptyCatalog);
            }
            let mut best = None;
            let mut best_d = f64::INFINITY;
            for &i in indices {
                let item = items.get(i).ok_or(Error::CatalogIndexOutOfBounds {
                    index: i,
                    table_size: items.len(),
                })?;
                let d2 = squared_distance(candidate, item);
                if d2 < best_d || (d2 == best_d && Some(i) < best) {
                    best_d = d2;
                    best = Some(i);
                }
            }
            Ok(items[best.unwrap()].clone())
        }
    }
}

const TOP_SLACK: usize = 7;
const REBASE_LIMIT: f64 = 500.0;

#[derive(Debug, Clone, Copy)]
struct Entry {
    score: f64,
    expv: f64,
    idx: u32,
}

#[derive(Debug, Clone)]
struct UserTop {
    /// Exact top-`entries.len()` of all creators, ranked by descending
    /// score with ascending-index tie-break. Length stays within
    /// `[min(k_eff + 1, n), cap]`.
    entries: Vec<Entry>,
    /// Prefix sums of the entries' exponentials: `pre[q]` is the sum over
    /// `entries[..q]`, accumulated left to right (so `pre[q]` is bitwise
    /// identical to the plain resummation).
    pre: Vec<f64>,
    k_eff: usize,
    cap: usize,
    beta: f64,
    rscale: f64,
    shift: f64,
}

/// Ranking predicate: does `a` rank strictly before `b`?
#[inline]
fn before(a: (f64, u32), b: (f64, u32)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

impl UserTop {
    #[inline]
    fn expv_for(&self, score: f64) -> f64 {
        if self.beta == 0.0 || self.beta.is_infinite() {
            0.0
        } else {
            ((score - self.shift) / self.beta).exp()
        }
    }

    fn needs_rebase(&self, score: f64) -> bool {
        if self.beta == 0.0 || self.beta.is_infinite() {
            return false;
        }
        ((score - self.shift) / self.beta).abs() > REBASE_LIMIT
    }

    fn rebase(&mut self) {
        self.shift = self.entries.first().map_or(0.0, |e| e.score);
        let (beta, shift) = (self.beta, self.shift);
        for e in &mut self.entries {
            e.expv = if beta == 0.0 || beta.is_infinite() {
                0.0
            } else {
                ((e.score - shift) / beta).exp()
            };
        }
    }

    fn position_of(&self, idx: u32) -> Option<usize> {
        self.entries.iter().position(|e| e.idx == idx)
    }

    /// Rank a key would occupy among the entries (binary search; exact
    /// position when the key is present).
    #[inline]
    fn rank_of(&self, key: (f64, u32)) -> usize {
        self.entries.partition_point(|e| before((e.score, e.idx), key))
    }

    fn refresh_pre(&mut self) {
        // Prefixes are only ever queried up to the top-K boundary.
        let upto = self.k_eff.min(self.entries.len());
        self.pre.clear();
        self.pre.reserve(upto + 1);
        let mut acc = 0.0;
        self.pre.push(acc);
        for e in &self.entries[..upto] {
            acc += e.expv;
            self.pre.push(acc);
        }
    }

    fn insert_sorted(&mut self, entry: Entry) -> usize {
        let pos = self
            .entries
            .iter()
            .position(|e| before((entry.score, entry.idx), (e.score, e.idx)))
            .unwrap_or(self.entries.len());
        self.entries.insert(pos, entry);
        pos
    }
}

/// Incremental evaluator for utilities and matching under the current joint
/// strategy profile.
pub struct MatchCache {
    users: Vec<UserTop>,
    /// Creator-major score matrix, `scores_c[i * m + j]`: the per-creator
    /// hot loops read it sequentially. Per-user rows are gathered on
    /// demand (rescans) or via a blocked transpose (reselects).
    scores_c: Vec<f64>,
    /// Per-user entry ranked just outside the top-K, as a `(score, idx)`
    /// key: a candidate not ranked before it cannot enter the top-K. The
    /// sentinel `(-inf, u32::MAX)` forces the full evaluation.
    thr: Vec<(f64, u32)>,
    /// Per-user key of the last tracked entry, deciding whether a
    /// non-member score enters the tracked range at all.
    tail: Vec<(f64, u32)>,
    /// Creator-major membership bitsets, `words` u64 words per creator.
    member_c: Vec<u64>,
    words: usize,
    n: usize,
    m: usize,
    d: usize,
    flat_x: Vec<f64>,
    mass: Vec<f64>,
}

impl MatchCache {
    fn build(env: &EnvironmentSpec, creators: &[CreatorState], adjustments: &[UserAdjustment]) -> Self {
        let m = env.population.len();
        let n = creators.len();
        let d = env.dim();
        let mut flat_x = Vec::with_capacity(m * d);
        for x in &env.population.embeddings {
            flat_x.extend_from_slice(x);
        }
        let words = m.div_ceil(64);
        let mut cache = MatchCache {
            users: Vec::with_capacity(m),
            scores_c: vec![0.0; m * n],
            thr: vec![(f64::NEG_INFINITY, u32::MAX); m],
            tail: vec![(f64::NEG_INFINITY, u32::MAX); m],
            member_c: vec![0; n * words],
            words,
            n,
            m,
            d,
            flat_x,
            mass: env.population.mass.clone(),
        };
        for j in 0..m {
            for (i, c) in creators.iter().enumerate() {
                cache.scores_c[i * m + j] =
                    relevance(&env.relevance, &c.strategy, &env.population.embeddings[j]).unwrap();
            }
        }
        for _ in 0..m {
            cache.users.push(UserTop {
                entries: Vec::new(),
                pre: Vec::new(),
                k_eff: 0,
                cap: 0,
                beta: 0.0,
                rscale: 1.0,
                shift: 0.0,
            });
        }
        cache.reselect(adjustments);
        cache
    }

    /// Row-major copy of the score matrix, via a cache-blocked transpose.
    fn transpose_scores(&self) -> Vec<f64> {
        let (m, n) = (self.m, self.n);
        let mut rows = vec![0.0; m * n];
        const B: usize = 64;
        for jb in (0..m).step_by(B) {
            for ib in (0..n).step_by(B) {
                for j in jb..(jb + B).min(m) {
                    for i in ib..(ib + B).min(n) {
                        rows[j * n + i] = self.scores_c[i * m + j];
                    }
                }
            }
        }
        rows
    }

    /// Rebuilds the per-user top lists for new adjustments, reusing the
    /// score matrix.
    fn reselect(&mut self, adjustments: &[UserAdjustment]) {
        let rows = self.transpose_scores();
        self.member_c.iter_mut().for_each(|w| *w = 0);
        for j in 0..self.m {
            let adj = &adjustments[j];
            let k_eff = effective_k(adj.k, self.n);
            let cap = (k_eff + 1 + TOP_SLACK).min(self.n);
            let row = &rows[j * self.n..(j + 1) * self.n];
            let mut entries: Vec<Entry> = Vec::with_capacity(cap + 1);
            for (i, &s) in row.iter().enumerate() {
                let key = (s, i as u32);
                if entries.len() < cap
                    || before(key, (entries[cap - 1].score, entries[cap - 1].idx))
                {
                    let pos = entries
                        .iter()
                        .position(|e| before(key, (e.score, e.idx)))
                        .unwrap_or(entries.len());
                    entries.insert(pos, Entry { score: s, expv: 0.0, idx: i as u32 });
                    entries.truncate(cap);
                }
            }
            let t = &mut self.users[j];
            t.entries = entries;
            t.k_eff = k_eff;
            t.cap = cap;
            t.beta = adj.beta;
            t.rscale = adj.reward_scale;
            t.rebase();
            let idxs: Vec<u32> = self.users[j].entries.iter().map(|e| e.idx).collect();
            for idx in idxs {
                self.set_member(j, idx as usize, true);
            }
            self.refresh_user(j);
        }
    }

    /// Re-derives the per-user auxiliary structures (exponential prefix
    /// sums and the top-K admission threshold) after an entry change.
    fn refresh_user(&mut self, j: usize) {
        let t = &mut self.users[j];
        t.refresh_pre();
        self.thr[j] = match t.entries.get(t.k_eff) {
            Some(e) => (e.score, e.idx),
            None => (f64::NEG_INFINITY, u32::MAX),
        };
        self.tail[j] = match t.entries.last() {
            Some(e) => (e.score, e.idx),
            None => (f64::NEG_INFINITY, u32::MAX),
        };
    }

    #[inline]
    fn set_member(&mut self, j: usize, i: usize, value: bool) {
        let word = i * self.words + j / 64;
        let bit = 1u64 << (j % 64);
        if value {
            self.member_c[word] |= bit;
        } else {
            self.member_c[word] &= !bit;
        }
    }

    /// Relevance of a strategy against every user, written into `out`.
    /// Small dimensions dispatch to fully unrolled kernels.
    fn strategy_scores(&self, model: &RelevanceModel, s: &[f64], out: &mut Vec<f64>) {
        fn linear<const D: usize>(flat: &[f64], s: &[f64], c0: f64, c1: f64, out: &mut Vec<f64>) {
            let s: [f64; D] = s.try_into().unwrap();
            out.extend(flat.as_chunks::<D>().0.iter().map(|chunk| {
                let mut d2 = 0.0;
                for idx in 0..D {
                    let diff = s[idx] - chunk[idx];
                    d2 += diff * diff;
                }
                (c0 - d2.sqrt() / c1).max(0.0)
            }));
        }
        fn dot<const D: usize>(flat: &[f64], s: &[f64], offset: f64, scale: f64, out: &mut Vec<f64>) {
            let s: [f64; D] = s.try_into().unwrap();
            out.extend(flat.as_chunks::<D>().0.iter().map(|chunk| {
                let mut dp = 0.0;
                for idx in 0..D {
                    dp += s[idx] * chunk[idx];
                }
                (dp - offset) / scale
            }));
        }
        out.clear();
        out.reserve(self.m);
        match *model {
            RelevanceModel::TruncatedLinearDistance { c0, c1 } => match self.d {
                2 => linear::<2>(&self.flat_x, s, c0, c1, out),
                3 => linear::<3>(&self.flat_x, s, c0, c1, out),
                4 => linear::<4>(&self.flat_x, s, c0, c1, out),
                5 => linear::<5>(&self.flat_x, s, c0, c1, out),
                6 => linear::<6>(&self.flat_x, s, c0, c1, out),
                _ => {
                    for chunk in self.flat_x.chunks_exact(self.d) {
                        let d2: f64 = s.iter().zip(chunk).map(|(a, b)| (a - b) * (a - b)).sum();
                        out.push((c0 - d2.sqrt() / c1).max(0.0));
                    }
                }
            },
            RelevanceModel::DotProduct { offset, scale } => match self.d {
                2 => dot::<2>(&self.flat_x, s, offset, scale, out),
                3 => dot::<3>(&self.flat_x, s, offset, scale, out),
                4 => dot::<4>(&self.flat_x, s, offset, scale, out),
                5 => dot::<5>(&self.flat_x, s, offset, scale, out),
                6 => dot::<6>(&self.flat_x, s, offset, scale, out),
                _ => {
                    for chunk in self.flat_x.chunks_exact(self.d) {
                        let dp: f64 = s.iter().zip(chunk).map(|(a, b)| a * b).sum();
                        out.push((dp - offset) / scale);
                    }
                }
            },
        }
    }

    /// Matching probability of entry `pos` within user `j`'s top-K.
    #[inline]
    fn prob_at(&self, j: usize, pos: usize) -> f64 {
        let t = &self.users[j];
        if pos >= t.k_eff.min(t.entries.len()) {
            return 0.0;
        }
        if t.beta == 0.0 {
            return if pos == 0 { 1.0 } else { 0.0 };
        }
        let k = t.k_eff.min(t.entries.len());
        if t.beta.is_infinite() {
            return 1.0 / k as f64;
        }
        t.entries[pos].expv / t.pre[k]
    }

    /// Expected matched relevance of user `j` (exact, no sampling).
    pub fn user_utility(&self, j: usize) -> f64 {
        let t = &self.users[j];
        let k = t.k_eff.min(t.entries.len());
        if t.beta == 0.0 {
            return t.entries[0].score;
        }
        if t.beta.is_infinite() {
            return t.entries[..k].iter().map(|e| e.score).sum::<f64>() / k as f64;
        }
        t.entries[..k].iter().map(|e| e.score * e.expv).sum::<f64>() / t.pre[k]
    }

    /// Mass-weighted welfare under the deployed matching.
    pub fn welfare(&self) -> f64 {
        (0..self.m).map(|j| self.mass[j] * self.user_utility(j)).sum()
    }

    /// Matching distribution support for user `j`: `(creator, probability)`
    /// pairs over the top-K set.
    pub fn match_probs(&self, j: usize) -> Vec<(usize, f64)> {
        let t = &self.users[j];
        let k = t.k_eff.min(t.entries.len());
        (0..k)
            .map(|pos| (t.entries[pos].idx as usize, self.prob_at(j, pos)))
            .collect()
    }

    /// Current utility of creator `i`, using the creator-major membership
    /// bitset to touch only users where `i` is ranked.
    pub fn creator_utility(&self, i: usize, reward: &RewardScheme) -> f64 {
        let mut u = 0.0;
        let base = i * self.words;
        for w in 0..self.words {
            let mut bits = self.member_c[base + w];
            while bits != 0 {
                let j = w * 64 + bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let t = &self.users[j];
                let pos = t.rank_of((self.scores_c[i * self.m + j], i as u32));
                debug_assert_eq!(t.entries[pos].idx, i as u32);
                let p = self.prob_at(j, pos);
                if p > 0.0 {
                    u += self.mass[j] * t.rscale * reward.reward(t.entries[pos].score) * p;
                }
            }
        }
        u
    }

    /// Utility of creator `i` if it switched to the strategy whose per-user
    /// scores are `cand`, others fixed. Pure read, `O(log K)` per user.
    pub fn candidate_utility(&self, i: usize, cand: &[f64], reward: &RewardScheme) -> f64 {
        let i32idx = i as u32;
        let mut u = 0.0;
        let col = &self.scores_c[i * self.m..(i + 1) * self.m];
        for j in 0..self.m {
            let c = cand[j];
            // Admission test against the entry just outside the top-K;
            // failing it proves at least K others rank before the
            // candidate, so its probability is zero.
            if !before((c, i32idx), self.thr[j]) {
                continue;
            }
            let t = &self.users[j];
            let k = t.k_eff; // already clamped to [1, n]
            // Where i currently sits, so it can be excluded from "others".
            let member = self.member_c[i * self.words + j / 64] >> (j % 64) & 1 == 1;
            let pos_i = if member { t.rank_of((col[j], i32idx)) } else { usize::MAX };
            // Rank of the candidate among the other creators' entries; the
            // new top-K is the candidate plus the first (K - 1) others.
            let rank = t.rank_of((c, i32idx));
            let others_before = rank - usize::from(pos_i < rank);
            if others_before >= k {
                continue;
            }
            let p = if t.beta == 0.0 {
                if others_before == 0 {
                    1.0
                } else {
                    0.0
                }
            } else if t.beta.is_infinite() {
                1.0 / k as f64
            } else {
                // Prefix covering the first (K - 1) others, skipping i.
                let in_prefix = pos_i < k - 1;
                let q = k - 1 + usize::from(in_prefix);
                let denom = t.pre[q] - if in_prefix { t.entries[pos_i].expv } else { 0.0 };
                let exp_c = t.expv_for(c);
                exp_c / (denom + exp_c)
            };
            if p > 0.0 {
                u += self.mass[j] * t.rscale * reward.reward(c) * p;
            }
        }
        u
    }

    /// Commits creator `i`'s move; `cand` holds its new per-user scores.
    pub fn apply_move(&mut self, i: usize, cand: &[f64]) {
        let i32idx = i as u32;
        for j in 0..self.m {
            let old = self.scores_c[i * self.m + j];
            let c = cand[j];
            if c == old {
                continue;
            }
            self.scores_c[i * self.m + j] = c;
            if self.member_c[i * self.words + j / 64] >> (j % 64) & 1 == 1 {
                let full = self.users[j].entries.len() == self.n;
                let t = &mut self.users[j];
                let pos = t.position_of(i32idx).expect("membership flag out of sync");
                let last = *t.entries.last().unwrap();
                let threshold = if last.idx == i32idx { (old, i32idx) } else { (last.score, last.idx) };
                t.entries.remove(pos);
                if full || before((c, i32idx), threshold) || (c, i32idx) == threshold {
                    if t.needs_rebase(c) {
                        t.rebase();
                    }
                    let expv = t.expv_for(c);
                    t.insert_sorted(Entry { score: c, expv, idx: i32idx });
                } else {
                    // Dropped out of the tracked range.
                    self.set_member(j, i, false);
                    if self.users[j].entries.len() < (self.users[j].k_eff + 1).min(self.n) {
                        self.rescan_user(j);
                    }
                }
                self.refresh_user(j);
            } else {
                if before((c, i32idx), self.tail[j]) {
                    let t = &mut self.users[j];
                    if t.needs_rebase(c) {
                        t.rebase();
                    }
                    let expv = t.expv_for(c);
                    t.insert_sorted(Entry { score: c, expv, idx: i32idx });
                    self.set_member(j, i, true);
                    if self.users[j].entries.len() > self.users[j].cap {
                        let popped = self.users[j].entries.pop().unwrap();
                        self.set_member(j, popped.idx as usize, false);
                    }
                    self.refresh_user(j);
                }
            }
        }
    }

    /// Full rebuild of user `j`'s top list from the score row, reusing
    /// cached exponentials where the score is unchanged.
    fn rescan_user(&mut self, j: usize) {
        let old_entries = std::mem::take(&mut self.users[j].entries);
        for e in &old_entries {
            self.set_member(j, e.idx as usize, false);
        }
        let cap = self.users[j].cap;
        let row: Vec<f64> = (0..self.n).map(|i| self.scores_c[i * self.m + j]).collect();
        let mut entries: Vec<Entry> = Vec::with_capacity(cap + 1);
        for (i, &s) in row.iter().enumerate() {
            let key = (s, i as u32);
            if entries.len() < cap || before(key, (entries[cap - 1].score, entries[cap - 1].idx)) {
                let pos = entries
                    .iter()
                    .position(|e| before(key, (e.score, e.idx)))
                    .unwrap_or(entries.len());
                entries.insert(pos, Entry { score: s, expv: f64::NAN, idx: i as u32 });
                entries.truncate(cap);
            }
        }
        let t = &mut self.users[j];
        for e in &mut entries {
            e.expv = match old_entries.iter().find(|o| o.idx == e.idx && o.score == e.score) {
                Some(o) => o.expv,
                None => {
                    if t.needs_rebase(e.score) {
                        // Rebase below, after entries are in place.
                        f64::NAN
                    } else {
                        t.expv_for(e.score)
                    }
                }
            };
        }
        t.entries = entries;
        if t.entries.iter().any(|e| e.expv.is_nan()) {
            t.rebase();
        }
        let idxs: Vec<u32> = self.users[j].entries.iter().map(|e| e.idx).collect();
        for idx in idxs {
            self.set_member(j, idx as usize, true);
        }
        self.refresh_user(j);
    }

    /// Updates only the per-user reward scales (UIR redeployment), leaving
    /// the matching structures untouched.
    fn set_reward_scales(&mut self, adjustments: &[UserAdjustment]) {
        for (t, adj) in self.users.iter_mut().zip(adjustments) {
            t.rscale = adj.reward_scale;
        }
    }

    /// Updates temperatures and reward scales when the truncation levels
    /// are unchanged (SMT redeployment): the top lists are selected by
    /// score alone, so only the exponentials need recomputing.
    fn set_softness(&mut self, adjustments: &[UserAdjustment]) {
        for j in 0..self.m {
            let adj = &adjustments[j];
            let t = &mut self.users[j];
            t.rscale = adj.reward_scale;
            if t.beta != adj.beta {
                t.beta = adj.beta;
                t.rebase();
                self.refresh_user(j);
            }
        }
    }
}

/// A running simulation: environment, current strategies, deployed
/// per-user adjustments, and the incremental evaluator.
pub struct Simulation<'a> {
    pub env: &'a EnvironmentSpec,
    pub creators: Vec<CreatorState>,
    pub adjustments: Vec<UserAdjustment>,
    cache: MatchCache,
    scratch: Vec<f64>,
}

impl<'a> Simulation<'a> {
    /// Starts from the environment's initial strategies under baseline
    /// matching.
    pub fn new(env: &'a EnvironmentSpec) -> Self {
        let adjustments = crate::game::baseline_adjustments(env.matching, env.population.len());
        Self::with_adjustments(env, adjustments)
    }

    pub fn with_adjustments(env: &'a EnvironmentSpec, adjustments: Vec<UserAdjustment>) -> Self {
        Self::with_creators(env, env.creators.clone(), adjustments)
    }

    pub fn with_creators(
        env: &'a EnvironmentSpec,
        creators: Vec<CreatorState>,
        adjustments: Vec<UserAdjustment>,
    ) -> Self {
        let cache = MatchCache::build(env, &creators, &adjustments);
        Simulation {
            env,
            creators,
            adjustments,
            cache,
            scratch: Vec::new(),
        }
    }

    /// Redeploys per-user adjustments. No-op when unchanged; reward-scale
    /// only changes skip the top-list rebuild so matching state (and hence
    /// the trajectory under reward-only mechanisms) is bit-stable.
    pub fn set_adjustments(&mut self, adjustments: Vec<UserAdjustment>) {
        if adjustments == self.adjustments {
            return;
        }
        let matching_unchanged = adjustments
            .iter()
            .zip(&self.adjustments)
            .all(|(a, b)| a.beta == b.beta && a.k == b.k);
        let k_unchanged =
            adjustments.iter().zip(&self.adjustments).all(|(a, b)| a.k == b.k);
        if matching_unchanged {
            self.cache.set_reward_scales(&adjustments);
        } else if k_unchanged {
            self.cache.set_softness(&adjustments);
        } else {
            self.cache.reselect(&adjustments);
        }
        self.adjustments = adjustments;
    }

    pub fn welfare(&self) -> f64 {
        self.cache.welfare()
    }

    pub fn user_utilities(&self) -> Vec<f64> {
        (0..self.env.population.len()).map(|j| self.cache.user_utility(j)).collect()
    }

    /// Unweighted mean expected utility per user group.
    pub fn group_utilities(&self) -> Vec<f64> {
        let pop = &self.env.population;
        let mut sums = vec![0.0; pop.num_groups()];
        for (j, &g) in pop.group_of.iter().enumerate() {
            sums[g] += self.cache.user_utility(j);
        }
        sums.iter()
            .zip(&pop.group_sizes)
            .map(|(s, &n)| s / n as f64)
            .collect()
    }

    pub fn creator_utility(&self, i: usize) -> f64 {
        self.cache.creator_utility(i, &self.env.reward)
    }

    /// Utility of creator `i` at a hypothetical strategy, others fixed.
    pub fn candidate_utility(&mut self, i: usize, strategy: &[f64]) -> f64 {
        let mut scratch = std::mem::take(&mut self.scratch);
        self.cache.strategy_scores(&self.env.relevance, strategy, &mut scratch);
        let u = self.cache.candidate_utility(i, &scratch, &self.env.reward);
        self.scratch = scratch;
        u
    }

    pub fn match_probs(&self, j: usize) -> Vec<(usize, f64)> {
        self.cache.match_probs(j)
    }

    /// One local better-response trial for creator `i`. Exactly one random
    /// direction is drawn per call.
    pub fn lbr_step(&mut self, i: usize, config: &LbrConfig, rng: &mut impl Rng) -> Result<StepOutcome> {
        let d = self.env.dim();
        let g = random_unit_direction(d, rng);
        let raw: Vec<f64> = self.creators[i]
            .strategy
            .iter()
            .zip(&g)
            .map(|(s, gi)| s + config.eta * gi)
            .collect();
        let is_catalog = matches!(self.creators[i].strategy_set, StrategySet::Catalog { .. });
        // Catalog moves are always evaluated at the projected item: the raw
        // point is not a playable strategy in a discrete set.
        let projected = if is_catalog || config.acceptance_point == AcceptancePoint::PostProjection {
            Some(project(&raw, &self.creators[i].strategy_set, &self.env.items)?)
        } else {
            None
        };
        let eval_point = projected.as_deref().unwrap_or(&raw);

        let u_old = self.creator_utility(i);
        let u_new = self.candidate_utility(i, eval_point);
        if u_new >= u_old {
            let committed = match projected {
                Some(p) => p,
                None => project(&raw, &self.creators[i].strategy_set, &self.env.items)?,
            };
            let mut scratch = std::mem::take(&mut self.scratch);
            self.cache.strategy_scores(&self.env.relevance, &committed, &mut scratch);
            self.cache.apply_move(i, &scratch);
            self.scratch = scratch;
            self.creators[i].strategy = committed;
            Ok(StepOutcome { accepted: true, strict: u_new > u_old })
        } else {
            Ok(StepOutcome { accepted: false, strict: false })
        }
    }

    /// One full round: every creator updates once, in a freshly drawn
    /// uniform random order. Updates are sequential, so later creators see
    /// earlier creators' new strategies.
    pub fn run_round(&mut self, config: &LbrConfig, rng: &mut impl Rng) -> Result<Vec<StepOutcome>> {
        let n = self.creators.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut outcomes = vec![StepOutcome { accepted: false, strict: false }; n];
        for &i in &order {
            outcomes[i] = self.lbr_step(i, config, rng)?;
        }
        Ok(outcomes)
    }
}

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// One record per simulation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub epoch: usize,
    pub welfare: f64,
    pub group_utilities: Vec<f64>,
    pub weights: Vec<f64>,
    pub accepted: Vec<bool>,
    pub strict: Vec<bool>,
    /// Joint strategies, present on every stored round per the storage
    /// stride.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub strategies: Option<Vec<Vec<f64>>>,
}

/// Full record of a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub schema_version: u32,
    pub records: Vec<TraceRecord>,
    pub final_strategies: Vec<Vec<f64>>,
    pub final_weights: Vec<f64>,
}

impl SimulationTrace {
    pub fn new() -> Self {
        SimulationTrace {
            schema_version: TRACE_SCHEMA_VERSION,
            records: Vec::new(),
            final_strategies: Vec::new(),
            final_weights: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.records.windows(2) {
            if pair[1].step <= pair[0].step {
                return Err(Error::InvalidEnvironment(format!(
                    "trace steps not strictly increasing at step {}",
                    pair[1].step
                )));
            }
        }
        Ok(())
    }
}

impl Default for SimulationTrace {
    fn default() -> Self {
        Self::new()
    }
}

/// How often joint strategies are stored in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceOptions {
    /// `None` picks every round for small games (n <= 10) and every 10th
    /// round otherwise; final strategies are always stored.
    pub strategy_stride: Option<usize>,
}

impl TraceOptions {
    pub fn stride_for(&self, n: usize) -> usize {
        self.strategy_stride.unwrap_or(if n <= 10 { 1 } else { 10 })
    }

    pub fn full() -> Self {
        TraceOptions { strategy_stride: Some(1) }
    }
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions { strategy_stride: None }
    }
}

/// Plain LBR run (no epoch structure) under fixed adjustments; `weights`
/// are recorded in the trace as-is.
pub fn run_lbr(
    env: &EnvironmentSpec,
    adjustments: Vec<UserAdjustment>,
    weights: &[f64],
    config: &LbrConfig,
    options: &TraceOptions,
) -> Result<SimulationTrace> {
    let mut sim = Simulation::with_adjustments(env, adjustments);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut trace = SimulationTrace::new();
    let stride = options.stride_for(env.num_creators());
    for step in 0..config.rounds {
        let outcomes = sim.run_round(config, &mut rng)?;
        let store = step % stride == 0 || step + 1 == config.rounds;
        trace.records.push(TraceRecord {
            step,
            epoch: 0,
            welfare: sim.welfare(),
            group_utilities: sim.group_utilities(),
            weights: weights.to_vec(),
            accepted: outcomes.iter().map(|o| o.accepted).collect(),
            strict: outcomes.iter().map(|o| o.strict).collect(),
            strategies: store.then(|| sim.creators.iter().map(|c| c.strategy.clone()).collect()),
        });
    }
    trace.final_strategies = sim.creators.iter().map(|c| c.strategy.clone()).collect();
    trace.final_weights = weights.to_vec();
    Ok(trace)
}

/// Approximate local-equilibrium detection: true iff no creator accepted a
/// strictly improving move in the last `window` rounds. This is a
/// heuristic; exact certification of a local Nash equilibrium is not
/// possible from finitely many trial moves.
pub fn detect_local_equilibrium(records: &[TraceRecord], window: usize) -> bool {
    if records.is_empty() || window == 0 {
        return false;
    }
    let start = records.len().saturating_sub(window);
    records[start..]
        .iter()
        .all(|r| r.strict.iter().all(|&s| !s))
}
