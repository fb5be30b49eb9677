//! Stick-breaking weights and the tree-structured column law.
//!
//! Given a weight `p`, a column is generated on the tree by starting the root
//! at 0 and letting each edge of length `t` switch on independently with
//! probability `1 − exp(−γ t)`, `γ = −log(1 − p)`. A leaf is 1 iff some edge
//! on its root path switched on. On a unit-depth tree every leaf is 1 with
//! probability exactly `p`.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{feature_similarity, BinaryFactorMatrix};
use crate::tree::RootedTree;

/// Sticks are extended until the weight drops below this value...
pub const STICK_FLOOR: f64 = 1e-6;
/// ...or this many sticks have been drawn.
pub const MAX_STICKS: usize = 200;

/// Stick-breaking weights `p_k = ∏_{i≤k} v_i`, `v_i ~ Beta(α, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StickState {
    pub alpha: f64,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
}

impl StickState {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { alpha, v: Vec::new(), p: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Appends one stick and returns its weight.
    pub fn extend_one<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        // Inverse CDF of Beta(α, 1).
        let u: f64 = rng.random();
        let v = u.powf(1.0 / self.alpha);
        let p = self.p.last().copied().unwrap_or(1.0) * v;
        self.v.push(v);
        self.p.push(p);
        p
    }

    pub fn extend<R: Rng + ?Sized>(&mut self, count: usize, rng: &mut R) {
        for _ in 0..count {
            self.extend_one(rng);
        }
    }

    /// `Σ log v_k` over the stored sticks.
    pub fn log_v_sum(&self) -> f64 {
        self.v.iter().map(|v| v.ln()).sum()
    }
}

pub fn stick_draw<R: Rng + ?Sized>(alpha: f64, count: usize, rng: &mut R) -> Result<StickState> {
    if count == 0 {
        return Err(Error::InvalidParameter("stick count must be at least 1".into()));
    }
    let mut s = StickState::new(alpha)?;
    s.extend(count, rng);
    Ok(s)
}

/// `γ = −log(1 − p)`.
pub fn rate_of(p: f64) -> f64 {
    -(-p).ln_1p()
}

fn check_weight(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("feature weight must lie in (0, 1), got {p}")));
    }
    Ok(())
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Reusable buffers for the upward message pass.
#[derive(Clone, Debug, Default)]
pub struct MessageScratch {
    log_zero: Vec<f64>,
    all_ones: Vec<bool>,
}

/// Log-probability of a leaf configuration given rate `gamma`.
///
/// Each node `v` carries `log P(leaves below v | v = 0)` and a flag for "every
/// leaf below is 1" (which is `P(leaves below | v = 1)`, either 0 or 1).
pub fn column_log_prob_rate(tree: &RootedTree, gamma: f64, config: &[u8], scratch: &mut MessageScratch) -> f64 {
    let m = tree.node_count();
    scratch.log_zero.clear();
    scratch.log_zero.resize(m, 0.0);
    scratch.all_ones.clear();
    scratch.all_ones.resize(m, true);
    for &v in tree.postorder() {
        if let Some(s) = tree.leaf_sample(v) {
            let on = config[s] == 1;
            scratch.all_ones[v] = on;
            scratch.log_zero[v] = if on { f64::NEG_INFINITY } else { 0.0 };
            continue;
        }
        let mut acc = 0.0;
        let mut ones = true;
        for &c in tree.children(v) {
            let t = tree.edge_length(c);
            let stay = -gamma * t;
            if scratch.all_ones[c] {
                // ln(1 − e^{−γt}); −∞ for a zero-length edge.
                let fire = (-(stay.exp_m1())).ln();
                acc += log_add_exp(stay + scratch.log_zero[c], fire);
            } else {
                ones = false;
                acc += stay + scratch.log_zero[c];
            }
        }
        scratch.log_zero[v] = acc;
        scratch.all_ones[v] = ones;
    }
    scratch.log_zero[tree.root()]
}

fn edge_term(log_zero: f64, all_ones: bool, stay: f64, fire: f64) -> f64 {
    if all_ones {
        log_add_exp(stay + log_zero, fire)
    } else {
        stay + log_zero
    }
}

/// Upward messages for one column, kept so that a single leaf can be
/// queried or changed by revisiting only its root path.
#[derive(Clone, Debug)]
pub struct ColumnMessages {
    stay: Vec<f64>,
    fire: Vec<f64>,
    log_zero: Vec<f64>,
    all_ones: Vec<bool>,
    /// Term each node contributes to its parent's `log_zero`.
    term: Vec<f64>,
}

impl ColumnMessages {
    pub fn new(tree: &RootedTree, p_k: f64, config: &[u8]) -> Self {
        let m = tree.node_count();
        let mut msg = Self {
            stay: vec![0.0; m],
            fire: vec![0.0; m],
            log_zero: vec![0.0; m],
            all_ones: vec![true; m],
            term: vec![0.0; m],
        };
        msg.set_weight(tree, p_k, config);
        msg
    }

    /// Recomputes everything for a new weight.
    pub fn set_weight(&mut self, tree: &RootedTree, p_k: f64, config: &[u8]) {
        let gamma = rate_of(p_k);
        for v in 0..tree.node_count() {
            let stay = -gamma * tree.edge_length(v);
            self.stay[v] = stay;
            self.fire[v] = (-(stay.exp_m1())).ln();
        }
        for &v in tree.postorder() {
            if let Some(s) = tree.leaf_sample(v) {
                let on = config[s] == 1;
                self.all_ones[v] = on;
                self.log_zero[v] = if on { f64::NEG_INFINITY } else { 0.0 };
            } else {
                let mut acc = 0.0;
                let mut ones = true;
                for &c in tree.children(v) {
                    acc += self.term[c];
                    ones &= self.all_ones[c];
                }
                self.log_zero[v] = acc;
                self.all_ones[v] = ones;
            }
            self.term[v] = edge_term(self.log_zero[v], self.all_ones[v], self.stay[v], self.fire[v]);
        }
    }

    /// Log-probability of the whole column.
    pub fn log_prob(&self, tree: &RootedTree) -> f64 {
        self.log_zero[tree.root()]
    }

    /// Walks from `sample`'s leaf to the root with the leaf set to `value`,
    /// optionally storing the new messages.
    fn walk(&mut self, tree: &RootedTree, sample: usize, value: u8, store: bool) -> f64 {
        let mut v = tree.leaf_of_sample(sample);
        let mut ones = value == 1;
        let mut lz = if ones { f64::NEG_INFINITY } else { 0.0 };
        loop {
            let term = edge_term(lz, ones, self.stay[v], self.fire[v]);
            if store {
                self.log_zero[v] = lz;
                self.all_ones[v] = ones;
                self.term[v] = term;
            }
            let Some(parent) = tree.parent(v) else { return lz };
            let mut acc = term;
            let mut all = ones;
            for &c in tree.children(parent) {
                if c != v {
                    acc += self.term[c];
                    all &= self.all_ones[c];
                }
            }
            lz = acc;
            ones = all;
            v = parent;
        }
    }

    /// Column log-probabilities with `sample` set to 0 and to 1.
    pub fn leaf_log_probs(&mut self, tree: &RootedTree, sample: usize) -> (f64, f64) {
        (self.walk(tree, sample, 0, false), self.walk(tree, sample, 1, false))
    }

    /// Records a new value at `sample`.
    pub fn set_leaf(&mut self, tree: &RootedTree, sample: usize, value: u8) {
        self.walk(tree, sample, value, true);
    }
}

/// Exact log-probability of one column under the tree process with weight `p_k`.
pub fn column_log_prob(tree: &RootedTree, p_k: f64, config: &[u8]) -> Result<f64> {
    check_weight(p_k)?;
    if config.len() != tree.leaf_count() {
        return Err(Error::DimensionMismatch(format!(
            "configuration of length {} on a tree with {} leaves",
            config.len(),
            tree.leaf_count()
        )));
    }
    Ok(column_log_prob_rate(tree, rate_of(p_k), config, &mut MessageScratch::default()))
}

/// `P(z_i = 1 | z_{−i})` for one column; entry `i` of `config` is ignored.
pub fn conditional_leaf_prob(tree: &RootedTree, p_k: f64, config: &[u8], i: usize) -> Result<f64> {
    check_weight(p_k)?;
    if config.len() != tree.leaf_count() {
        return Err(Error::DimensionMismatch(format!(
            "configuration of length {} on a tree with {} leaves",
            config.len(),
            tree.leaf_count()
        )));
    }
    if i >= config.len() {
        return Err(Error::IndexOutOfRange { index: i, len: config.len() });
    }
    let mut work = config.to_vec();
    let mut scratch = MessageScratch::default();
    let (l0, l1) = leaf_log_probs(tree, rate_of(p_k), &mut work, i, &mut scratch);
    prob_from_log_pair(l0, l1)
}

/// Column log-probabilities with entry `i` set to 0 and to 1. Restores `config[i]`.
pub fn leaf_log_probs(
    tree: &RootedTree,
    gamma: f64,
    config: &mut [u8],
    i: usize,
    scratch: &mut MessageScratch,
) -> (f64, f64) {
    let saved = config[i];
    config[i] = 0;
    let l0 = column_log_prob_rate(tree, gamma, config, scratch);
    config[i] = 1;
    let l1 = column_log_prob_rate(tree, gamma, config, scratch);
    config[i] = saved;
    (l0, l1)
}

/// `e^{l1} / (e^{l0} + e^{l1})`, stably.
pub fn prob_from_log_pair(l0: f64, l1: f64) -> Result<f64> {
    match (l0 == f64::NEG_INFINITY, l1 == f64::NEG_INFINITY) {
        (true, true) => Err(Error::InvalidParameter("the remaining configuration has zero probability".into())),
        (true, false) => Ok(1.0),
        (false, true) => Ok(0.0),
        _ => Ok(1.0 / (1.0 + (l0 - l1).exp())),
    }
}

/// Forward simulation of one column.
pub fn sample_column<R: Rng + ?Sized>(tree: &RootedTree, p_k: f64, rng: &mut R) -> Vec<u8> {
    let gamma = rate_of(p_k);
    let mut on = vec![false; tree.node_count()];
    let mut config = vec![0u8; tree.leaf_count()];
    for &v in tree.postorder().iter().rev() {
        if let Some(parent) = tree.parent(v) {
            on[v] = on[parent] || {
                let fire = -(-gamma * tree.edge_length(v)).exp_m1();
                fire > 0.0 && rng.random::<f64>() < fire
            };
        }
        if let Some(s) = tree.leaf_sample(v) {
            config[s] = u8::from(on[v]);
        }
    }
    config
}

/// Log density of the Gamma(1, 1) hyperprior on α.
pub fn alpha_log_prior(alpha: f64) -> Result<f64> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    Ok(-alpha)
}

/// `∫₀¹ (1 − (1−p)^L) / p dp = ψ(L + 1) + γ_E` for total tree length `L`.
///
/// `α` times this is the expected number of nonzero columns; on the flat tree
/// with `n` leaves it is the harmonic number `H_n`.
pub fn feature_mass(total_length: f64) -> f64 {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    statrs::function::gamma::digamma(total_length + 1.0) + EULER_GAMMA
}

/// How α is treated when drawing from the prior.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AlphaMode {
    Fixed(f64),
    /// α ~ Gamma(1, 1) afresh for every draw.
    GammaHyperprior,
}

/// Draws `Z` from the truncated stick-breaking prior on `tree`.
pub fn sample_prior_matrix<R: Rng + ?Sized>(tree: &RootedTree, alpha: f64, rng: &mut R) -> Result<BinaryFactorMatrix> {
    let mut sticks = StickState::new(alpha)?;
    let mut columns = Vec::new();
    for _ in 0..MAX_STICKS {
        let p = sticks.extend_one(rng);
        if p < STICK_FLOOR {
            break;
        }
        let col = sample_column(tree, p, rng);
        if col.contains(&1) {
            columns.push(col);
        }
    }
    BinaryFactorMatrix::from_columns(tree.leaf_count(), columns)
}

fn draw_alpha<R: Rng + ?Sized>(mode: AlphaMode, rng: &mut R) -> f64 {
    match mode {
        AlphaMode::Fixed(a) => a,
        AlphaMode::GammaHyperprior => Gamma::new(1.0, 1.0).expect("valid shape").sample(rng),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassEstimate {
    pub estimate: f64,
    pub std_err: f64,
    pub hits: u64,
    pub draws: u64,
}

impl MassEstimate {
    /// Normal-approximation confidence interval at the given z-score, clipped to [0, 1].
    pub fn interval(&self, z: f64) -> (f64, f64) {
        ((self.estimate - z * self.std_err).max(0.0), (self.estimate + z * self.std_err).min(1.0))
    }

    /// Rule-of-three 95% upper bound, for estimates with no hits.
    pub fn upper_bound_95(&self) -> f64 {
        if self.hits == 0 {
            3.0 / self.draws as f64
        } else {
            self.interval(1.96).1
        }
    }
}

/// Monte-Carlo estimate of `P(ZZᵀ = Z₀Z₀ᵀ)` under the prior on `tree`.
pub fn prior_mass_estimate<R: Rng + ?Sized>(
    tree: &RootedTree,
    z0: &BinaryFactorMatrix,
    draws: u64,
    alpha_mode: AlphaMode,
    rng: &mut R,
) -> Result<MassEstimate> {
    if draws == 0 {
        return Err(Error::InvalidParameter("draws must be at least 1".into()));
    }
    if z0.n() != tree.leaf_count() {
        return Err(Error::DimensionMismatch(format!(
            "truth has {} rows, tree has {} leaves",
            z0.n(),
            tree.leaf_count()
        )));
    }
    if let AlphaMode::Fixed(a) = alpha_mode {
        StickState::new(a)?;
    }
    let target = feature_similarity(z0);
    let mut hits = 0u64;
    for _ in 0..draws {
        let alpha = draw_alpha(alpha_mode, rng);
        if alpha <= 0.0 {
            continue;
        }
        let z = sample_prior_matrix(tree, alpha, rng)?;
        if z.k() == z0.k() && feature_similarity(&z) == target {
            hits += 1;
        }
    }
    let estimate = hits as f64 / draws as f64;
    let std_err = (estimate * (1.0 - estimate) / draws as f64).sqrt();
    Ok(MassEstimate { estimate, std_err, hits, draws })
}
