//! MCMC over `(Z, p, α, σ_A², σ_X²)` with the loadings integrated out.
//!
//! Two representations of the feature weights are supported.
//!
//! * [`Truncation::Infinite`]: the nonzero columns and their weights are the
//!   points of a Poisson process with intensity `α p⁻¹ P_T(c | p) dp`, which is
//!   the stick-breaking prior with the all-zero columns marginalised out. The
//!   expected number of nonzero columns is `α Ψ_L` (see [`feature_mass`]).
//!   Only the active columns are represented; new ones enter through a
//!   birth/death move on singleton columns.
//! * [`Truncation::Finite`]: exactly `K` ordered sticks, zero columns kept.
//!
//! Per sweep: Gibbs over `z_ik`, birth/death per row, stick random walks,
//! the conjugate α draw and the log-variance random walks.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::LikelihoodCache;
use crate::model::{feature_similarity, BinaryFactorMatrix, DataMatrix, FeatureSimilarityMatrix, NoiseParams};
use crate::prior::{
    column_log_prob_rate, feature_mass, rate_of, sample_column, stick_draw, ColumnMessages, MessageScratch, StickState,
    MAX_STICKS, STICK_FLOOR,
};
use crate::tree::RootedTree;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    Infinite,
    Finite(usize),
}

/// Where a chain starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// No features (infinite model) or all-zero columns (finite model).
    Empty,
    /// A draw from the prior on the tree at the initial α.
    Prior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Standard deviation of the random walk on `logit p_k`.
    pub stick_step: f64,
    /// Standard deviation of the random walk on `log σ²`.
    pub log_variance_step: f64,
    pub max_new_features_per_row: usize,
    /// Pins both variances when set.
    pub fixed_params: Option<NoiseParams>,
    /// Pins α when set.
    pub fixed_alpha: Option<f64>,
    pub initial_params: NoiseParams,
    pub initial_alpha: f64,
    pub truncation: Truncation,
    /// When false the data are ignored and the chain targets the prior.
    pub use_likelihood: bool,
    /// Check the likelihood cache against a full recomputation every this many sweeps.
    pub verify_every: Option<usize>,
    pub initial_state: InitialState,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            burn_in: 200,
            thin: 1,
            seed: 0,
            stick_step: 0.5,
            log_variance_step: 0.3,
            max_new_features_per_row: 1,
            fixed_params: None,
            fixed_alpha: None,
            initial_params: NoiseParams::default(),
            initial_alpha: 1.0,
            truncation: Truncation::Infinite,
            use_likelihood: true,
            verify_every: Some(1000),
            initial_state: InitialState::Prior,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.iterations <= self.burn_in {
            return bad(format!("iterations ({}) must exceed burn_in ({})", self.iterations, self.burn_in));
        }
        if self.thin == 0 {
            return bad("thin must be at least 1".into());
        }
        if !(self.stick_step.is_finite() && self.stick_step > 0.0) {
            return bad(format!("stick step must be positive, got {}", self.stick_step));
        }
        if !(self.log_variance_step.is_finite() && self.log_variance_step > 0.0) {
            return bad(format!("log-variance step must be positive, got {}", self.log_variance_step));
        }
        for a in [Some(self.initial_alpha), self.fixed_alpha].into_iter().flatten() {
            if !(a.is_finite() && a > 0.0) {
                return bad(format!("alpha must be positive, got {a}"));
            }
        }
        if let Some(p) = self.fixed_params {
            NoiseParams::new(p.sigma_a_sq, p.sigma_x_sq).map_err(|e| Error::Config(e.to_string()))?;
        }
        NoiseParams::new(self.initial_params.sigma_a_sq, self.initial_params.sigma_x_sq)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.truncation == Truncation::Finite(0) {
            return bad("a finite truncation needs at least one column".into());
        }
        if self.verify_every == Some(0) {
            return bad("verify_every must be positive".into());
        }
        Ok(())
    }
}

/// Mutable state of one chain, including its random number generator.
#[derive(Clone, Debug)]
pub struct ChainState {
    n: usize,
    columns: Vec<Vec<u8>>,
    counts: Vec<usize>,
    weights: Vec<f64>,
    alpha: f64,
    params: NoiseParams,
    lik: Option<LikelihoodCache>,
    messages: Vec<ColumnMessages>,
    rng: ChaCha8Rng,
}

impl ChainState {
    pub fn columns(&self) -> &[Vec<u8>] {
        &self.columns
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn params(&self) -> NoiseParams {
        self.params
    }

    /// Number of nonzero columns.
    pub fn k_plus(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn log_likelihood(&self) -> f64 {
        self.lik.as_ref().map_or(0.0, LikelihoodCache::value)
    }

    pub fn z(&self) -> BinaryFactorMatrix {
        BinaryFactorMatrix::from_columns(self.n, self.columns.clone()).expect("state columns are binary")
    }
}

/// Counts of proposals and acceptances per move type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub birth_proposed: u64,
    pub birth_accepted: u64,
    pub death_proposed: u64,
    pub death_accepted: u64,
    pub stick_proposed: u64,
    pub stick_accepted: u64,
    pub variance_proposed: u64,
    pub variance_accepted: u64,
}

/// A retained draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub iteration: usize,
    pub z: BinaryFactorMatrix,
    pub alpha: f64,
    pub params: NoiseParams,
    pub log_likelihood: f64,
    /// Unnormalised log posterior density.
    pub log_posterior: f64,
}

impl PosteriorSample {
    pub fn similarity(&self) -> FeatureSimilarityMatrix {
        feature_similarity(&self.z)
    }

    pub fn k_plus(&self) -> usize {
        self.z.k()
    }
}

/// Per-sweep trace entry, kept for every iteration including burn-in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub k_plus: usize,
    pub alpha: f64,
    pub log_posterior: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRun {
    pub samples: Vec<PosteriorSample>,
    pub trace: Vec<TraceRow>,
    pub acceptance: AcceptanceStats,
}

/// A chain bound to its data and tree.
pub struct Sampler<'a> {
    x: &'a DataMatrix,
    tree: &'a RootedTree,
    config: SamplerConfig,
    /// `Ψ_L` for the tree's total length.
    mass: f64,
    /// Length of the edge above each sample's leaf.
    leaf_edge: Vec<f64>,
    state: ChainState,
    scratch: MessageScratch,
    stats: AcceptanceStats,
}

impl<'a> Sampler<'a> {
    /// Starts a chain from the configured [`InitialState`].
    pub fn new(x: &'a DataMatrix, tree: &'a RootedTree, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let n = x.n();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let alpha = config.fixed_alpha.unwrap_or(config.initial_alpha);
        let from_prior = config.initial_state == InitialState::Prior;
        let (columns, weights) = match config.truncation {
            Truncation::Infinite if from_prior => {
                let mut sticks = StickState::new(alpha)?;
                let mut columns = Vec::new();
                let mut weights = Vec::new();
                for _ in 0..MAX_STICKS {
                    let p = sticks.extend_one(&mut rng);
                    if p < STICK_FLOOR {
                        break;
                    }
                    let col = sample_column(tree, p, &mut rng);
                    if col.contains(&1) {
                        columns.push(col);
                        weights.push(p);
                    }
                }
                (columns, weights)
            }
            Truncation::Infinite => (Vec::new(), Vec::new()),
            Truncation::Finite(k) => {
                let sticks = stick_draw(alpha, k, &mut rng)?;
                let weights: Vec<f64> =
                    sticks.p.iter().map(|&p| p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)).collect();
                let columns = if from_prior {
                    weights.iter().map(|&p| sample_column(tree, p, &mut rng)).collect()
                } else {
                    vec![vec![0u8; n]; k]
                };
                (columns, weights)
            }
        };
        Self::with_state(x, tree, config, columns, weights, rng)
    }

    /// Starts a chain from given columns and weights.
    pub fn from_columns(
        x: &'a DataMatrix,
        tree: &'a RootedTree,
        config: SamplerConfig,
        columns: Vec<Vec<u8>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::with_state(x, tree, config, columns, weights, rng)
    }

    fn with_state(
        x: &'a DataMatrix,
        tree: &'a RootedTree,
        config: SamplerConfig,
        columns: Vec<Vec<u8>>,
        weights: Vec<f64>,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let n = x.n();
        if tree.leaf_count() != n {
            return Err(Error::DimensionMismatch(format!(
                "tree has {} leaves but the data have {n} rows",
                tree.leaf_count()
            )));
        }
        if columns.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!("{} columns but {} weights", columns.len(), weights.len())));
        }
        if let Some(c) = columns.iter().find(|c| c.len() != n || c.iter().any(|&v| v > 1)) {
            return Err(Error::DimensionMismatch(format!("factor column of length {} against {n} rows", c.len())));
        }
        if let Some(w) = weights.iter().find(|&&w| !(w > 0.0 && w < 1.0)) {
            return Err(Error::InvalidParameter(format!("feature weight must lie in (0, 1), got {w}")));
        }
        match config.truncation {
            Truncation::Infinite => {
                if columns.iter().any(|c| c.iter().all(|&v| v == 0)) {
                    return Err(Error::InvalidParameter("the infinite model stores only nonzero columns".into()));
                }
            }
            Truncation::Finite(k) => {
                if columns.len() != k {
                    return Err(Error::DimensionMismatch(format!("expected {k} columns, got {}", columns.len())));
                }
                if weights.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::InvalidParameter("finite-mode weights must be strictly decreasing".into()));
                }
            }
        }
        let params = config.fixed_params.unwrap_or(config.initial_params);
        let alpha = config.fixed_alpha.unwrap_or(config.initial_alpha);
        let lik = if config.use_likelihood { Some(LikelihoodCache::new(x, &columns, params)?) } else { None };
        let messages = columns.iter().zip(&weights).map(|(c, &w)| ColumnMessages::new(tree, w, c)).collect();
        let counts = columns.iter().map(|c| c.iter().filter(|&&v| v == 1).count()).collect();
        let mut leaf_edge = vec![0.0; n];
        for (s, e) in leaf_edge.iter_mut().enumerate() {
            *e = tree.edge_length(tree.leaf_of_sample(s));
        }
        Ok(Self {
            x,
            tree,
            mass: feature_mass(tree.total_length()),
            leaf_edge,
            state: ChainState { n, columns, counts, weights, alpha, params, lik, messages, rng },
            scratch: MessageScratch::default(),
            stats: AcceptanceStats::default(),
            config,
        })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn acceptance(&self) -> AcceptanceStats {
        self.stats
    }

    fn infinite(&self) -> bool {
        self.config.truncation == Truncation::Infinite
    }

    fn column_lp(&self, k: usize) -> f64 {
        self.state.messages[k].log_prob(self.tree)
    }

    /// Checks the likelihood cache against a full recomputation.
    pub fn verify_cache(&self, rel_tol: f64) -> Result<()> {
        match &self.state.lik {
            Some(cache) => cache.verify(self.x, &self.state.columns, rel_tol),
            None => Ok(()),
        }
    }

    /// Unnormalised log posterior of the current state.
    pub fn log_posterior(&mut self) -> f64 {
        let alpha = self.state.alpha;
        let mut lp = self.state.log_likelihood();
        for k in 0..self.state.columns.len() {
            lp += self.column_lp(k);
        }
        lp += if self.infinite() {
            self.state.weights.iter().map(|&p| alpha.ln() - p.ln()).sum::<f64>() - alpha * self.mass
        } else {
            finite_stick_log_prior(&self.state.weights, alpha)
        };
        if self.config.fixed_alpha.is_none() {
            lp -= alpha;
        }
        if self.config.fixed_params.is_none() {
            lp -= self.state.params.sigma_a_sq + self.state.params.sigma_x_sq;
        }
        lp
    }

    /// Gibbs pass over row `i`. In the infinite model an entry is skipped
    /// when it is the only 1 in its column; such columns change dimension
    /// and are handled by the birth/death move.
    pub fn gibbs_row(&mut self, i: usize) -> Result<()> {
        let kk = self.state.columns.len();
        if kk == 0 {
            return Ok(());
        }
        let infinite = self.infinite();
        let st = &mut self.state;
        let ctx = match &st.lik {
            Some(cache) => Some(cache.row_context(self.x, &st.columns, i)?),
            None => None,
        };
        let score = |lik: &Option<LikelihoodCache>, row: &[u8]| -> Result<f64> {
            match (lik, &ctx) {
                (Some(cache), Some(ctx)) => cache.row_value(ctx, row),
                _ => Ok(0.0),
            }
        };
        let mut row: Vec<u8> = st.columns.iter().map(|c| c[i]).collect();
        let mut value = score(&st.lik, &row)?;
        let mut changed = false;
        for k in 0..kk {
            let current = row[k];
            if infinite && st.counts[k] == usize::from(current) {
                continue;
            }
            let (l0, l1) = st.messages[k].leaf_log_probs(self.tree, i);
            row[k] ^= 1;
            let target = if l1 == f64::NEG_INFINITY {
                0
            } else if l0 == f64::NEG_INFINITY {
                1
            } else {
                let alt = score(&st.lik, &row)?;
                let delta = alt - value;
                // log P(z = 1) − log P(z = 0).
                let log_odds = l1 - l0 + if current == 0 { delta } else { -delta };
                let u: f64 = st.rng.random();
                let target = u8::from(u < 1.0 / (1.0 + (-log_odds).exp()));
                if target != current {
                    value = alt;
                }
                target
            };
            row[k] = current;
            if target != current {
                if l0 == f64::NEG_INFINITY || l1 == f64::NEG_INFINITY {
                    row[k] = target;
                    value = score(&st.lik, &row)?;
                }
                row[k] = target;
                st.columns[k][i] = target;
                if target == 1 {
                    st.counts[k] += 1;
                } else {
                    st.counts[k] -= 1;
                }
                st.messages[k].set_leaf(self.tree, i, target);
                changed = true;
            }
        }
        if changed {
            if let (Some(cache), Some(ctx)) = (st.lik.as_mut(), ctx.as_ref()) {
                cache.commit_row(self.x, &st.columns, ctx)?;
            }
        }
        Ok(())
    }

    /// One Gibbs pass over every row.
    pub fn gibbs_sweep(&mut self) -> Result<()> {
        for i in 0..self.x.n() {
            self.gibbs_row(i)?;
        }
        Ok(())
    }

    fn singleton_log_intensity(&mut self, i: usize, p: f64) -> f64 {
        let mut col = vec![0u8; self.x.n()];
        col[i] = 1;
        self.state.alpha.ln() - p.ln() + column_log_prob_rate(self.tree, rate_of(p), &col, &mut self.scratch)
    }

    /// `Beta(1, b)` proposal for new singleton weights, `b = L − t_i + 1`.
    fn birth_shape(&self, i: usize) -> f64 {
        (self.tree.total_length() - self.leaf_edge[i]).max(0.0) + 1.0
    }

    fn birth_log_q(b: f64, p: f64) -> f64 {
        b.ln() + (b - 1.0) * (-p).ln_1p()
    }

    /// Birth/death of columns whose only 1 is at row `i`. Infinite model only.
    pub fn propose_new_features(&mut self, i: usize) -> Result<()> {
        if !self.infinite() {
            return Ok(());
        }
        for _ in 0..self.config.max_new_features_per_row {
            self.birth_death(i)?;
        }
        Ok(())
    }

    fn birth_death(&mut self, i: usize) -> Result<()> {
        let n = self.x.n();
        let singletons: Vec<usize> = (0..self.state.columns.len())
            .filter(|&k| self.state.counts[k] == 1 && self.state.columns[k][i] == 1)
            .collect();
        let s = singletons.len() as f64;
        let b = self.birth_shape(i);
        let birth = self.state.rng.random::<bool>();
        if birth {
            self.stats.birth_proposed += 1;
            let u: f64 = self.state.rng.random();
            let p = 1.0 - u.powf(1.0 / b);
            if !(p > 0.0 && p < 1.0) {
                return Ok(());
            }
            let log_lambda = self.singleton_log_intensity(i, p);
            if log_lambda == f64::NEG_INFINITY {
                return Ok(());
            }
            let mut col = vec![0u8; n];
            col[i] = 1;
            let ChainState { lik, columns, .. } = &mut self.state;
            let eval = match lik {
                Some(cache) => {
                    let version = cache.version();
                    Some(cache.evaluate_add(self.x, columns, &col, version)?)
                }
                None => None,
            };
            let delta = eval.as_ref().map_or(0.0, |e| e.delta());
            let log_a = delta + log_lambda - Self::birth_log_q(b, p) - (s + 1.0).ln();
            let u: f64 = self.state.rng.random();
            if u.ln() < log_a {
                self.stats.birth_accepted += 1;
                let st = &mut self.state;
                st.messages.push(ColumnMessages::new(self.tree, p, &col));
                st.columns.push(col);
                st.counts.push(1);
                st.weights.push(p);
                if let (Some(cache), Some(eval)) = (st.lik.as_mut(), eval) {
                    cache.commit_add(self.x, &st.columns, eval)?;
                }
            }
        } else {
            self.stats.death_proposed += 1;
            if singletons.is_empty() {
                return Ok(());
            }
            let k = singletons[self.state.rng.random_range(0..singletons.len())];
            let p = self.state.weights[k];
            let delta = match &self.state.lik {
                Some(cache) => cache.evaluate_remove(k, cache.version())?,
                None => 0.0,
            };
            let log_a = delta + Self::birth_log_q(b, p) + s.ln() - self.singleton_log_intensity(i, p);
            let u: f64 = self.state.rng.random();
            if u.ln() < log_a {
                self.stats.death_accepted += 1;
                self.remove_column(k)?;
            }
        }
        Ok(())
    }

    fn remove_column(&mut self, k: usize) -> Result<()> {
        let st = &mut self.state;
        st.columns.remove(k);
        st.counts.remove(k);
        st.weights.remove(k);
        st.messages.remove(k);
        if let Some(cache) = st.lik.as_mut() {
            cache.commit_remove(self.x, &st.columns, k)?;
        }
        Ok(())
    }

    /// Random-walk Metropolis on `logit p_k` for every column.
    pub fn update_sticks(&mut self) -> Result<()> {
        let step = Normal::new(0.0, self.config.stick_step)
            .map_err(|e| Error::Config(format!("stick step: {e}")))?;
        for k in 0..self.state.weights.len() {
            self.stats.stick_proposed += 1;
            let p = self.state.weights[k];
            let u = (p / (1.0 - p)).ln() + step.sample(&mut self.state.rng);
            let q = 1.0 / (1.0 + (-u).exp());
            let accept_u: f64 = self.state.rng.random();
            if !(q > 0.0 && q < 1.0) {
                continue;
            }
            let before = self.stick_log_target(k, self.column_lp(k));
            let col = column_log_prob_rate(self.tree, rate_of(q), &self.state.columns[k], &mut self.scratch);
            self.state.weights[k] = q;
            let after = self.stick_log_target(k, col);
            if accept_u.ln() < after - before {
                self.stats.stick_accepted += 1;
                self.state.messages[k].set_weight(self.tree, q, &self.state.columns[k]);
            } else {
                self.state.weights[k] = p;
            }
        }
        Ok(())
    }

    /// Log target for `logit p_k`, up to terms not involving `p_k`.
    fn stick_log_target(&self, k: usize, col: f64) -> f64 {
        let p = self.state.weights[k];
        if self.infinite() {
            // α p⁻¹ P_T(c | p) times the Jacobian p(1 − p).
            (-p).ln_1p() + col
        } else {
            finite_stick_log_prior(&self.state.weights, self.state.alpha) + p.ln() + (-p).ln_1p() + col
        }
    }

    /// Conjugate draw of α.
    pub fn update_alpha(&mut self) -> Result<()> {
        if self.config.fixed_alpha.is_some() {
            return Ok(());
        }
        let st = &mut self.state;
        st.alpha = match self.config.truncation {
            Truncation::Infinite => alpha_poisson_draw(st.weights.len(), self.mass, &mut st.rng)?,
            Truncation::Finite(_) => {
                let v = stick_fractions(&st.weights);
                alpha_conjugate_draw(&v, &mut st.rng)?
            }
        };
        Ok(())
    }

    /// Random-walk Metropolis on `log σ_A²` then `log σ_X²`, with Gamma(1, 1)
    /// priors on each variance.
    pub fn update_variances(&mut self) -> Result<()> {
        if self.config.fixed_params.is_some() {
            return Ok(());
        }
        let step = Normal::new(0.0, self.config.log_variance_step)
            .map_err(|e| Error::Config(format!("log-variance step: {e}")))?;
        for which in 0..2 {
            self.stats.variance_proposed += 1;
            let cur = self.state.params;
            let jump = step.sample(&mut self.state.rng);
            let accept_u: f64 = self.state.rng.random();
            let mut prop = cur;
            let (old, new) = if which == 0 {
                prop.sigma_a_sq = cur.sigma_a_sq * jump.exp();
                (cur.sigma_a_sq, prop.sigma_a_sq)
            } else {
                prop.sigma_x_sq = cur.sigma_x_sq * jump.exp();
                (cur.sigma_x_sq, prop.sigma_x_sq)
            };
            if !(new.is_finite() && new > 0.0) {
                continue;
            }
            let delta = match &self.state.lik {
                Some(cache) => match cache.evaluate_params(prop) {
                    Ok(v) => v - cache.value(),
                    Err(Error::Numerical(_)) => continue,
                    Err(e) => return Err(e),
                },
                None => 0.0,
            };
            // Gamma(1, 1) prior plus the log-scale Jacobian.
            let log_a = delta - (new - old) + (new / old).ln();
            if accept_u.ln() < log_a {
                self.stats.variance_accepted += 1;
                self.state.params = prop;
                if let Some(cache) = self.state.lik.as_mut() {
                    cache.set_params(prop)?;
                }
            }
        }
        Ok(())
    }

    /// One full sweep of every move.
    pub fn sweep(&mut self) -> Result<()> {
        self.gibbs_sweep()?;
        for i in 0..self.x.n() {
            self.propose_new_features(i)?;
        }
        self.update_sticks()?;
        self.update_alpha()?;
        self.update_variances()?;
        let value = self.state.log_likelihood();
        if !value.is_finite() {
            return Err(Error::Numerical(format!("log-likelihood became {value}")));
        }
        Ok(())
    }

    fn snapshot(&mut self, iteration: usize) -> PosteriorSample {
        let log_posterior = self.log_posterior();
        PosteriorSample {
            iteration,
            z: self.state.z(),
            alpha: self.state.alpha,
            params: self.state.params,
            log_likelihood: self.state.log_likelihood(),
            log_posterior,
        }
    }

    /// Runs the configured number of sweeps. Iterations are numbered from 1.
    pub fn run(mut self) -> Result<ChainRun> {
        let mut samples = Vec::new();
        let mut trace = Vec::with_capacity(self.config.iterations);
        for it in 1..=self.config.iterations {
            self.sweep()?;
            if let Some(every) = self.config.verify_every {
                if it % every == 0 {
                    self.verify_cache(1e-6)?;
                }
            }
            let keep = it > self.config.burn_in && (it - self.config.burn_in).is_multiple_of(self.config.thin);
            if keep {
                let s = self.snapshot(it);
                trace.push(TraceRow { iteration: it, k_plus: s.k_plus(), alpha: s.alpha, log_posterior: s.log_posterior });
                samples.push(s);
            } else {
                let log_posterior = self.log_posterior();
                trace.push(TraceRow {
                    iteration: it,
                    k_plus: self.state.k_plus(),
                    alpha: self.state.alpha,
                    log_posterior,
                });
            }
        }
        Ok(ChainRun { samples, trace, acceptance: self.stats })
    }
}

/// Runs one chain from its default starting point.
pub fn run_chain(x: &DataMatrix, tree: &RootedTree, config: &SamplerConfig) -> Result<ChainRun> {
    Sampler::new(x, tree, config.clone())?.run()
}

/// Log density of `K` ordered weights under stick-breaking, `−∞` if unordered.
pub fn finite_stick_log_prior(p: &[f64], alpha: f64) -> f64 {
    if p.windows(2).any(|w| w[1] >= w[0]) || p.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
        return f64::NEG_INFINITY;
    }
    let Some(&last) = p.last() else { return 0.0 };
    p.len() as f64 * alpha.ln() + (alpha - 1.0) * last.ln() - p[..p.len() - 1].iter().map(|x| x.ln()).sum::<f64>()
}

/// `v_k = p_k / p_{k−1}` with `p_0 = 1`.
pub fn stick_fractions(p: &[f64]) -> Vec<f64> {
    let mut prev = 1.0;
    p.iter()
        .map(|&x| {
            let v = x / prev;
            prev = x;
            v
        })
        .collect()
}

/// Draws `α | v ~ Gamma(1 + K, rate 1 − Σ log v_k)` under a Gamma(1, 1) prior.
pub fn alpha_conjugate_draw<R: Rng + ?Sized>(v: &[f64], rng: &mut R) -> Result<f64> {
    if let Some(x) = v.iter().find(|&&x| !(x > 0.0 && x <= 1.0)) {
        return Err(Error::InvalidParameter(format!("stick fraction must lie in (0, 1], got {x}")));
    }
    let rate = 1.0 - v.iter().map(|x| x.ln()).sum::<f64>();
    gamma_draw(1.0 + v.len() as f64, rate, rng)
}

/// Draws `α ~ Gamma(1 + K⁺, rate 1 + Ψ_L)`, the conditional when only the
/// nonzero columns are represented.
pub fn alpha_poisson_draw<R: Rng + ?Sized>(k_plus: usize, mass: f64, rng: &mut R) -> Result<f64> {
    gamma_draw(1.0 + k_plus as f64, 1.0 + mass, rng)
}

fn gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Numerical(format!("gamma({shape}, {rate}): {e}")))?;
    // Guard against an underflow to exactly zero.
    Ok(g.sample(rng).max(f64::MIN_POSITIVE))
}

/// The sample with the largest log posterior; ties go to the earliest.
pub fn select_map_sample(samples: &[PosteriorSample]) -> Result<&PosteriorSample> {
    let mut best: Option<&PosteriorSample> = None;
    for s in samples {
        if best.is_none_or(|b| s.log_posterior > b.log_posterior) {
            best = Some(s);
        }
    }
    best.ok_or_else(|| Error::InvalidParameter("no samples to choose from".into()))
}

#[derive(Serialize)]
struct SampleRecord<'a> {
    iteration: usize,
    log_posterior: f64,
    log_likelihood: f64,
    alpha: f64,
    sigma_a_sq: f64,
    sigma_x_sq: f64,
    k_plus: usize,
    /// Rows joined by newlines, entries by commas.
    similarity: &'a str,
}

pub fn similarity_csv(s: &FeatureSimilarityMatrix) -> String {
    let n = s.n();
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            out.push('\n');
        }
        let row: Vec<String> = (0..n).map(|j| s.get(i, j).to_string()).collect();
        out.push_str(&row.join(","));
    }
    out
}

/// Writes one JSON object per line.
pub fn write_samples_jsonl<W: Write>(samples: &[PosteriorSample], mut out: W) -> Result<()> {
    for s in samples {
        let sim = similarity_csv(&s.similarity());
        let rec = SampleRecord {
            iteration: s.iteration,
            log_posterior: s.log_posterior,
            log_likelihood: s.log_likelihood,
            alpha: s.alpha,
            sigma_a_sq: s.params.sigma_a_sq,
            sigma_x_sq: s.params.sigma_x_sq,
            k_plus: s.k_plus(),
            similarity: &sim,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::collapsed_log_likelihood_columns;
    use crate::model::{generate_data, GroupPartition};
    use crate::prior::column_log_prob;
    use crate::tree::{flat_tree, group_tree, two_group_tree};
    use std::collections::HashMap;

    fn zero_data(n: usize, p: usize) -> DataMatrix {
        DataMatrix::new(n, p, vec![0.0; n * p]).unwrap()
    }

    fn prior_config(seed: u64) -> SamplerConfig {
        SamplerConfig {
            iterations: 2,
            burn_in: 0,
            seed,
            use_likelihood: false,
            fixed_alpha: Some(1.0),
            fixed_params: Some(NoiseParams::default()),
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let ok = SamplerConfig::default();
        ok.validate().unwrap();
        for bad in [
            SamplerConfig { burn_in: 1000, ..ok.clone() },
            SamplerConfig { thin: 0, ..ok.clone() },
            SamplerConfig { stick_step: 0.0, ..ok.clone() },
            SamplerConfig { log_variance_step: -1.0, ..ok.clone() },
            SamplerConfig { fixed_alpha: Some(0.0), ..ok.clone() },
            SamplerConfig { truncation: Truncation::Finite(0), ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn tree_size_must_match() {
        let x = zero_data(4, 3);
        let t = flat_tree(5).unwrap();
        assert!(Sampler::new(&x, &t, SamplerConfig::default()).is_err());
    }

    #[test]
    fn finite_stick_prior_matches_beta_product() {
        let p = [0.8, 0.3, 0.1];
        let alpha: f64 = 2.5;
        let v = stick_fractions(&p);
        // Beta(α, 1) densities of v and the Jacobian of v → p.
        let direct: f64 =
            v.iter().map(|v| alpha.ln() + (alpha - 1.0) * v.ln()).sum::<f64>() - p[0].ln() - p[1].ln();
        assert!((finite_stick_log_prior(&p, alpha) - direct).abs() < 1e-12);
        assert_eq!(finite_stick_log_prior(&[0.3, 0.5], 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn alpha_conjugate_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = [0.5, 0.5, 0.5];
        let draws = 100_000;
        let xs: Vec<f64> = (0..draws).map(|_| alpha_conjugate_draw(&v, &mut rng).unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / draws as f64;
        let rate = 1.0 + 3.0 * 2f64.ln();
        let (m, var) = (4.0 / rate, 4.0 / (rate * rate));
        assert!((m - 1.298).abs() < 1e-3);
        assert!((mean - m).abs() < 3.0 * (var / draws as f64).sqrt());
        assert!(xs.iter().all(|&a| a > 0.0));
        // No sticks: the Gamma(1, 1) prior.
        let prior_mean = (0..draws).map(|_| alpha_conjugate_draw(&[], &mut rng).unwrap()).sum::<f64>() / draws as f64;
        assert!((prior_mean - 1.0).abs() < 3.0 / (draws as f64).sqrt());
        assert!(alpha_conjugate_draw(&[0.0], &mut rng).is_err());
    }

    #[test]
    fn map_selection() {
        let mk = |it, lp| PosteriorSample {
            iteration: it,
            z: BinaryFactorMatrix::empty(2),
            alpha: 1.0,
            params: NoiseParams::default(),
            log_likelihood: 0.0,
            log_posterior: lp,
        };
        assert!(select_map_sample(&[]).is_err());
        assert_eq!(select_map_sample(&[mk(1, -3.0)]).unwrap().iteration, 1);
        assert_eq!(select_map_sample(&[mk(1, -3.0), mk(2, -3.0)]).unwrap().iteration, 1);
        let many: Vec<_> = (0..50).map(|i| mk(i, ((i * 37) % 11) as f64)).collect();
        let scan = many.iter().fold(&many[0], |b, s| if s.log_posterior > b.log_posterior { s } else { b });
        assert_eq!(select_map_sample(&many).unwrap().iteration, scan.iteration);
    }

    #[test]
    fn single_entry_conditional_is_prior_times_likelihood_ratio() {
        // n = 1, one finite column: P(z = 1) ∝ p · N(x; 0, σ_A² + σ_X²).
        let x = DataMatrix::new(1, 3, vec![0.7, -1.2, 2.0]).unwrap();
        let t = flat_tree(1).unwrap();
        let params = NoiseParams::new(2.0, 0.5).unwrap();
        let p = 0.3;
        let l1 = collapsed_log_likelihood_columns(&x, &[vec![1]], params).unwrap();
        let l0 = collapsed_log_likelihood_columns(&x, &[vec![0]], params).unwrap();
        let expect = 1.0 / (1.0 + ((1.0 - p) / p) * (l0 - l1).exp());
        let cfg = SamplerConfig {
            truncation: Truncation::Finite(1),
            fixed_params: Some(params),
            fixed_alpha: Some(1.0),
            ..SamplerConfig::default()
        };
        let mut s = Sampler::from_columns(&x, &t, cfg, vec![vec![0]], vec![p]).unwrap();
        let draws = 100_000;
        let mut ones = 0;
        for _ in 0..draws {
            s.gibbs_sweep().unwrap();
            ones += usize::from(s.state().columns()[0][0]);
        }
        let freq = ones as f64 / draws as f64;
        // Successive Gibbs draws of a single entry are independent.
        let se = (expect * (1.0 - expect) / draws as f64).sqrt();
        assert!((freq - expect).abs() < 4.0 * se, "{freq} vs {expect}");
        s.verify_cache(1e-9).unwrap();
    }

    #[test]
    fn cache_stays_consistent_through_a_run() {
        let z0 = BinaryFactorMatrix::from_rows(&(0..12).map(|i| vec![u8::from(i < 6), u8::from(i % 3 == 0)]).collect::<Vec<_>>()).unwrap();
        let x = generate_data(&z0, NoiseParams::new(1.0, 0.25).unwrap(), 20, 3).unwrap();
        let t = two_group_tree(12, 0.5, &GroupPartition::halves(12)).unwrap();
        let cfg = SamplerConfig { iterations: 60, burn_in: 10, seed: 11, verify_every: Some(1), ..SamplerConfig::default() };
        let run = run_chain(&x, &t, &cfg).unwrap();
        assert_eq!(run.samples.len(), 50);
        assert_eq!(run.trace.len(), 60);
        for s in &run.samples {
            let lik = collapsed_log_likelihood_columns(&x, s.z.columns(), s.params).unwrap();
            assert!((lik - s.log_likelihood).abs() < 1e-6 * lik.abs().max(1.0));
            assert!(s.alpha > 0.0 && s.params.sigma_a_sq > 0.0 && s.params.sigma_x_sq > 0.0);
        }
    }

    #[test]
    fn same_seed_same_chain() {
        let z0 = BinaryFactorMatrix::from_rows(&(0..8).map(|i| vec![u8::from(i < 4)]).collect::<Vec<_>>()).unwrap();
        let x = generate_data(&z0, NoiseParams::default(), 10, 5).unwrap();
        let t = flat_tree(8).unwrap();
        let cfg = SamplerConfig { iterations: 40, burn_in: 5, thin: 3, seed: 9, ..SamplerConfig::default() };
        let a = run_chain(&x, &t, &cfg).unwrap();
        let b = run_chain(&x, &t, &cfg).unwrap();
        assert_eq!(a, b);
        let c = run_chain(&x, &t, &SamplerConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.trace, c.trace);
        let mut buf = Vec::new();
        write_samples_jsonl(&a.samples, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), a.samples.len());
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["iteration"], 8);
        assert_eq!(first["similarity"].as_str().unwrap().lines().count(), 8);
    }

    /// With the likelihood off and α fixed, the number of nonzero columns is
    /// Poisson(α Ψ_L) and every leaf marginal is `E[Σ_k z_ik] = α`.
    #[test]
    fn prior_is_invariant_without_likelihood() {
        let labels = [0, 0, 1, 1, 1];
        let t = group_tree(&labels, 0.6).unwrap();
        let x = zero_data(5, 1);
        let alpha = 1.5;
        let cfg = SamplerConfig { fixed_alpha: Some(alpha), ..prior_config(21) };
        let mut s = Sampler::new(&x, &t, cfg).unwrap();
        let sweeps = 200_000;
        let mut hist = vec![0u64; 40];
        let mut row_sum = 0u64;
        for _ in 0..sweeps {
            s.sweep().unwrap();
            hist[s.state().k_plus().min(39)] += 1;
            row_sum += s.state().columns().iter().map(|c| c[2] as u64).sum::<u64>();
        }
        let mean = alpha * feature_mass(t.total_length());
        let mut pois = (-mean).exp();
        let mut tv = 0.0;
        for (k, &h) in hist.iter().enumerate() {
            if k > 0 {
                pois *= mean / k as f64;
            }
            tv += (h as f64 / sweeps as f64 - pois).abs();
        }
        assert!(tv / 2.0 < 0.02, "tv {}", tv / 2.0);
        let leaf_mean = row_sum as f64 / sweeps as f64;
        assert!((leaf_mean - alpha).abs() < 0.05, "{leaf_mean}");
    }

    /// Under the Gamma(1, 1) hyperprior the K⁺ marginal is geometric with
    /// success probability 1 / (1 + Ψ_L).
    #[test]
    fn prior_is_invariant_with_alpha_updates() {
        let t = flat_tree(4).unwrap();
        let x = zero_data(4, 1);
        let cfg = SamplerConfig { fixed_alpha: None, ..prior_config(22) };
        let mut s = Sampler::new(&x, &t, cfg).unwrap();
        let sweeps = 200_000;
        let mut hist = vec![0u64; 60];
        for _ in 0..sweeps {
            s.sweep().unwrap();
            hist[s.state().k_plus().min(59)] += 1;
        }
        let psi = feature_mass(4.0);
        let q = psi / (1.0 + psi);
        let tv: f64 = hist
            .iter()
            .enumerate()
            .map(|(k, &h)| (h as f64 / sweeps as f64 - (1.0 - q) * q.powi(k as i32)).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.03, "tv {tv}");
    }

    #[test]
    fn finite_prior_sticks_follow_stick_breaking() {
        let t = flat_tree(3).unwrap();
        let x = zero_data(3, 1);
        let cfg = SamplerConfig { truncation: Truncation::Finite(2), fixed_alpha: Some(2.0), ..prior_config(23) };
        let mut s = Sampler::new(&x, &t, cfg).unwrap();
        let sweeps = 200_000;
        let (mut m1, mut m2, mut on) = (0.0, 0.0, 0u64);
        for _ in 0..sweeps {
            s.sweep().unwrap();
            m1 += s.state().weights()[0];
            m2 += s.state().weights()[1];
            on += s.state().columns()[1][0] as u64;
        }
        let n = sweeps as f64;
        // E[p_k] = (α / (α + 1))^k.
        assert!((m1 / n - 2.0 / 3.0).abs() < 0.01, "{}", m1 / n);
        assert!((m2 / n - 4.0 / 9.0).abs() < 0.01, "{}", m2 / n);
        assert!((on as f64 / n - 4.0 / 9.0).abs() < 0.01);
    }

    #[test]
    fn zero_signal_stays_sparse() {
        let n = 20;
        let p = 200;
        let x = generate_data(&BinaryFactorMatrix::empty(n), NoiseParams::default(), p, 31).unwrap();
        let t = flat_tree(n).unwrap();
        let cfg = SamplerConfig {
            iterations: 300,
            burn_in: 100,
            seed: 4,
            fixed_params: Some(NoiseParams::default()),
            ..SamplerConfig::default()
        };
        let run = run_chain(&x, &t, &cfg).unwrap();
        let mean_k = run.samples.iter().map(|s| s.k_plus() as f64).sum::<f64>() / run.samples.len() as f64;
        assert!(mean_k < 1.0, "{mean_k}");
    }

    #[test]
    fn planted_singleton_is_born_quickly() {
        let n = 10;
        let p = 500;
        let mut found = 0;
        for seed in 0..20u64 {
            let mut rows = vec![vec![0u8]; n];
            rows[3] = vec![1];
            let z0 = BinaryFactorMatrix::from_rows(&rows).unwrap();
            let x = generate_data(&z0, NoiseParams::new(4.0, 1.0).unwrap(), p, 100 + seed).unwrap();
            let t = flat_tree(n).unwrap();
            let cfg = SamplerConfig { seed, fixed_params: Some(NoiseParams::new(4.0, 1.0).unwrap()), ..SamplerConfig::default() };
            let mut s = Sampler::new(&x, &t, cfg).unwrap();
            for _ in 0..50 {
                s.sweep().unwrap();
                if s.state().columns().iter().any(|c| c[3] == 1) {
                    found += 1;
                    break;
                }
            }
        }
        assert!(found >= 18, "{found}/20");
    }

    #[test]
    fn ones_column_pushes_weight_up() {
        let n = 6;
        let t = flat_tree(n).unwrap();
        let x = zero_data(n, 1);
        let cfg = SamplerConfig { truncation: Truncation::Finite(1), ..prior_config(5) };
        let mut s = Sampler::from_columns(&x, &t, cfg, vec![vec![1; n]], vec![0.5]).unwrap();
        let mut mean = 0.0;
        let sweeps = 20_000;
        for _ in 0..sweeps {
            s.update_sticks().unwrap();
            mean += s.state().weights()[0];
        }
        // α = 1, one stick: the prior is uniform and the conditional is Beta(n + 1, 1).
        assert!((mean / sweeps as f64 - (n as f64 + 1.0) / (n as f64 + 2.0)).abs() < 0.02);
    }

    #[test]
    fn variance_calibration_with_fixed_z() {
        let n = 50;
        let p = 500;
        let truth = NoiseParams::new(1.0, 0.5).unwrap();
        let rows: Vec<Vec<u8>> = (0..n).map(|i| vec![u8::from(i % 2 == 0), u8::from(i % 5 == 0), u8::from(i < 20)]).collect();
        let z0 = BinaryFactorMatrix::from_rows(&rows).unwrap();
        let t = flat_tree(n).unwrap();
        for seed in 0..10u64 {
            let x = generate_data(&z0, truth, p, 500 + seed).unwrap();
            let cfg = SamplerConfig { seed, fixed_alpha: Some(1.0), ..SamplerConfig::default() };
            let mut s = Sampler::from_columns(&x, &t, cfg, z0.columns().to_vec(), vec![0.5, 0.2, 0.4]).unwrap();
            let mut a = Vec::new();
            let mut e = Vec::new();
            for it in 0..600 {
                s.update_variances().unwrap();
                if it >= 100 {
                    a.push(s.state().params().sigma_a_sq);
                    e.push(s.state().params().sigma_x_sq);
                }
            }
            let median = |v: &mut Vec<f64>| {
                v.sort_by(f64::total_cmp);
                v[v.len() / 2]
            };
            let (ma, me) = (median(&mut a), median(&mut e));
            assert!((ma / 1.0 - 1.0).abs() < 0.3, "seed {seed}: sigma_a^2 median {ma}");
            assert!((me / 0.5 - 1.0).abs() < 0.3, "seed {seed}: sigma_x^2 median {me}");
        }
    }

    /// Exact posterior over Z for a tiny finite model, by enumeration and
    /// tensor-product quadrature over the stick fractions.
    fn exact_similarity_law(x: &DataMatrix, t: &RootedTree, params: NoiseParams) -> HashMap<Vec<u32>, f64> {
        let n = x.n();
        let m = 300;
        // Midpoint rule in s with v = 1 − s², which smooths (1 − p)^{1/2}.
        let nodes: Vec<(f64, f64)> = (0..m)
            .map(|j| {
                let s = (j as f64 + 0.5) / m as f64;
                (1.0 - s * s, 2.0 * s / m as f64)
            })
            .collect();
        let configs: Vec<Vec<u8>> = (0..1u32 << n).map(|c| (0..n).map(|i| (c >> i & 1) as u8).collect()).collect();
        // prior[c1][c2] = ∫∫ P(c1 | v1) P(c2 | v1 v2) dv1 dv2 at α = 1.
        let mut prior = vec![vec![0.0; configs.len()]; configs.len()];
        let mut p2_table = vec![0.0; configs.len()];
        for &(v1, w1) in &nodes {
            let p1: Vec<f64> = configs.iter().map(|c| column_log_prob(t, v1, c).unwrap().exp()).collect();
            p2_table.iter_mut().for_each(|x| *x = 0.0);
            for &(v2, w2) in &nodes {
                let pp = v1 * v2;
                for (slot, c) in p2_table.iter_mut().zip(&configs) {
                    *slot += w2 * column_log_prob(t, pp, c).unwrap().exp();
                }
            }
            for a in 0..configs.len() {
                for b in 0..configs.len() {
                    prior[a][b] += w1 * p1[a] * p2_table[b];
                }
            }
        }
        let mut law: HashMap<Vec<u32>, f64> = HashMap::new();
        let mut logs = Vec::new();
        for a in 0..configs.len() {
            for b in 0..configs.len() {
                let cols = vec![configs[a].clone(), configs[b].clone()];
                let lp = prior[a][b].ln() + collapsed_log_likelihood_columns(x, &cols, params).unwrap();
                let z = BinaryFactorMatrix::from_columns(n, cols).unwrap();
                logs.push((feature_similarity(&z).as_slice().to_vec(), lp));
            }
        }
        let top = logs.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logs.iter().map(|l| (l.1 - top).exp()).sum();
        for (key, lp) in logs {
            *law.entry(key).or_default() += (lp - top).exp() / total;
        }
        law
    }

    #[test]
    fn micro_posterior_matches_enumeration() {
        let n = 4;
        let params = NoiseParams::new(1.0, 0.5).unwrap();
        let z0 = BinaryFactorMatrix::from_rows(&[vec![1, 0], vec![1, 1], vec![0, 1], vec![0, 0]]).unwrap();
        let x = generate_data(&z0, params, 6, 77).unwrap();
        let t = two_group_tree(n, 0.5, &GroupPartition::halves(n)).unwrap();
        let exact = exact_similarity_law(&x, &t, params);
        let cfg = SamplerConfig {
            truncation: Truncation::Finite(2),
            fixed_params: Some(params),
            fixed_alpha: Some(1.0),
            seed: 3,
            ..SamplerConfig::default()
        };
        let mut s = Sampler::new(&x, &t, cfg).unwrap();
        let sweeps = 200_000;
        let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
        for _ in 0..1000 {
            s.sweep().unwrap();
        }
        for _ in 0..sweeps {
            s.sweep().unwrap();
            *counts.entry(feature_similarity(&s.state().z()).as_slice().to_vec()).or_default() += 1;
        }
        let mut tv = 0.0;
        for (key, &prob) in &exact {
            tv += (prob - counts.get(key).copied().unwrap_or(0) as f64 / sweeps as f64).abs();
        }
        for (key, &c) in &counts {
            if !exact.contains_key(key) {
                tv += c as f64 / sweeps as f64;
            }
        }
        assert!(tv / 2.0 < 0.05, "tv {}", tv / 2.0);
    }
}
