//! Simulation protocols: truth construction, replicated fits under IBP, pIBP
//! and mis-specified pIBP priors, the scaling study in `p` and the Monte-Carlo
//! prior-mass study.
//!
//! Every random quantity is derived from a master seed, so re-running a
//! configuration reproduces all reported numbers exactly.

use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics, Statistics};

use crate::cluster::{binary_source, build_tree, permuted_labels, permuted_tree, Metric};
use crate::error::{Error, Result};
use crate::model::{
    factor_decomposition, generate_data, similarity_error, truncated_feature_count, BinaryFactorMatrix,
    GroupPartition, NoiseParams,
};
use crate::prior::{prior_mass_estimate, AlphaMode};
use crate::sampler::{run_chain, select_map_sample, SamplerConfig};
use crate::tree::{flat_tree, group_tree, two_group_tree, RootedTree};

/// Sim-1 truth layout: each column is the set of subgroups (out of eight) in
/// which it is active.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sim1Design {
    pub columns: Vec<Vec<usize>>,
}

impl Default for Sim1Design {
    /// Six pattern columns, three per superblock (subgroups 0–3 and 4–7),
    /// whose on/off patterns separate all eight subgroups, plus three
    /// columns that cross the superblocks.
    fn default() -> Self {
        let columns: [&[usize]; 9] = [
            &[0, 1, 2, 3],
            &[0, 1],
            &[0, 2],
            &[4, 5, 6, 7],
            &[4, 5],
            &[4, 6],
            &[1, 2, 5, 6],
            &[3, 4],
            &[0, 7],
        ];
        Self { columns: columns.iter().map(|c| c.to_vec()).collect() }
    }
}

pub const SIM1_GROUPS: usize = 8;

/// Builds the Sim-1 truth with `n / 8` samples per subgroup and returns it with
/// the subgroup label of every sample.
pub fn make_sim1_truth_with(n: usize, design: &Sim1Design) -> Result<(BinaryFactorMatrix, Vec<usize>)> {
    if n == 0 || !n.is_multiple_of(SIM1_GROUPS) {
        return Err(Error::InvalidParameter(format!("sim1 needs n divisible by {SIM1_GROUPS}, got {n}")));
    }
    if let Some(g) = design.columns.iter().flatten().find(|&&g| g >= SIM1_GROUPS) {
        return Err(Error::InvalidParameter(format!("sim1 design refers to subgroup {g}")));
    }
    let size = n / SIM1_GROUPS;
    let labels: Vec<usize> = (0..n).map(|i| i / size).collect();
    let columns: Vec<Vec<u8>> =
        design.columns.iter().map(|set| labels.iter().map(|g| u8::from(set.contains(g))).collect()).collect();
    if columns.iter().any(|c| c.iter().all(|&v| v == 0)) {
        return Err(Error::InvalidParameter("sim1 design has an empty column".into()));
    }
    Ok((BinaryFactorMatrix::from_columns(n, columns)?, labels))
}

pub fn make_sim1_truth(n: usize) -> Result<(BinaryFactorMatrix, Vec<usize>)> {
    make_sim1_truth_with(n, &Sim1Design::default())
}

/// Subgroups 0–3 against 4–7.
pub fn sim1_superblocks(labels: &[usize]) -> GroupPartition {
    let first: Vec<u8> = labels.iter().map(|&g| u8::from(g >= SIM1_GROUPS / 2)).collect();
    GroupPartition::from_labels(&first).expect("labels are 0 or 1")
}

pub const SIM2_BLOCKS: usize = 5;
pub const SIM2_RANDOM_COLUMNS: usize = 4;
pub const SIM2_BERNOULLI: f64 = 0.3;

/// Four Bernoulli(0.3) columns followed by indicators of five contiguous
/// blocks whose sizes differ by at most one. A random column that comes out
/// empty is redrawn.
pub fn make_sim2_truth(n: usize, seed: u64) -> Result<BinaryFactorMatrix> {
    if n < 2 * SIM2_BLOCKS {
        return Err(Error::InvalidParameter(format!("sim2 needs n ≥ {}, got {n}", 2 * SIM2_BLOCKS)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns = Vec::with_capacity(SIM2_RANDOM_COLUMNS + SIM2_BLOCKS);
    while columns.len() < SIM2_RANDOM_COLUMNS {
        let col: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(SIM2_BERNOULLI))).collect();
        if col.contains(&1) {
            columns.push(col);
        }
    }
    for b in 0..SIM2_BLOCKS {
        columns.push((0..n).map(|i| u8::from(i * SIM2_BLOCKS / n == b)).collect());
    }
    BinaryFactorMatrix::from_columns(n, columns)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Sim1,
    Sim2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PriorKind {
    Ibp,
    /// Sim1: subgroup tree with group edges of length `eta`. Sim2: the
    /// dendrogram of the truth rows (`eta` unused).
    Pibp { eta: f64 },
    /// The same constructions applied after a seeded shuffle of the samples.
    Mispibp { eta: f64 },
}

impl PriorKind {
    pub fn label(&self) -> &'static str {
        match self {
            PriorKind::Ibp => "ibp",
            PriorKind::Pibp { .. } => "pibp",
            PriorKind::Mispibp { .. } => "mispibp",
        }
    }

    /// The priors compared in the simulation tables.
    pub fn standard(scenario: Scenario) -> Vec<PriorKind> {
        match scenario {
            Scenario::Sim1 => vec![PriorKind::Ibp, PriorKind::Pibp { eta: 0.8 }, PriorKind::Mispibp { eta: 0.5 }],
            Scenario::Sim2 => vec![PriorKind::Ibp, PriorKind::Pibp { eta: 0.8 }, PriorKind::Mispibp { eta: 0.8 }],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub replicates: usize,
    pub mcmc: SamplerConfig,
    pub prior: PriorKind,
    pub truth_params: NoiseParams,
    pub master_seed: u64,
    /// Minimum column sum for a feature to count towards K̂.
    pub min_share: usize,
    pub sim1_design: Sim1Design,
    /// Free-form tag carried into the table, e.g. a group-strength level.
    pub beta_label: Option<f64>,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, n: usize, p: usize, prior: PriorKind) -> Self {
        Self {
            scenario,
            n,
            p,
            replicates: 40,
            mcmc: SamplerConfig::default(),
            prior,
            truth_params: NoiseParams::new(1.0, 0.5).expect("positive"),
            master_seed: 0,
            min_share: 5,
            sim1_design: Sim1Design::default(),
            beta_label: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.n == 0 || self.p == 0 {
            return Err(Error::Config(format!("dimensions must be positive, got n={} p={}", self.n, self.p)));
        }
        if let PriorKind::Pibp { eta } | PriorKind::Mispibp { eta } = self.prior {
            if !(0.0..1.0).contains(&eta) {
                return Err(Error::Config(format!("eta must lie in [0, 1), got {eta}")));
            }
        }
        self.mcmc.validate()
    }
}

const STREAM_DATA: u64 = 1;
const STREAM_CHAIN: u64 = 2;
const STREAM_TREE: u64 = 3;
const STREAM_TRUTH: u64 = 4;

/// Independent seed for `(stream, index)` under a master seed.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

/// Replicate seeds depend on `(n, p, replicate)` only, so the priors are
/// compared on the same data sets and chain streams.
fn replicate_seed(config: &ExperimentConfig, stream: u64, r: usize) -> u64 {
    let index = ((config.n as u64) << 40) ^ ((config.p as u64) << 20) ^ r as u64;
    derive_seed(config.master_seed, stream, index)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Outcome {
    Ok { f_norm: f64, k_hat: usize, k_plus: usize, log_posterior: f64, map_iteration: usize },
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub data_seed: u64,
    pub chain_seed: u64,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub prior: String,
    pub eta: Option<f64>,
    pub beta_label: Option<f64>,
    pub master_seed: u64,
    pub replicates: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub f_norm_mean: f64,
    pub f_norm_sd: f64,
    pub k_hat_mean: f64,
    pub k_hat_sd: f64,
    /// Set when fewer than two replicates succeeded and the sds are reported as 0.
    pub sd_degenerate: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RowResult {
    pub row: TableRow,
    pub records: Vec<ReplicateRecord>,
    #[serde(skip)]
    pub seconds: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    match values.len() {
        0 => (f64::NAN, 0.0),
        1 => (values[0], 0.0),
        _ => (values.mean(), values.std_dev()),
    }
}

/// Summary of the successful replicates, in replicate order.
pub fn aggregate(config: &ExperimentConfig, records: &[ReplicateRecord]) -> TableRow {
    let mut sorted: Vec<&ReplicateRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.replicate);
    let (mut f, mut k) = (vec![], vec![]);
    for r in &sorted {
        if let Outcome::Ok { f_norm, k_hat, .. } = r.outcome {
            f.push(f_norm);
            k.push(k_hat as f64);
        }
    }
    let (f_norm_mean, f_norm_sd) = mean_sd(&f);
    let (k_hat_mean, k_hat_sd) = mean_sd(&k);
    let eta = match config.prior {
        PriorKind::Ibp => None,
        PriorKind::Pibp { eta } | PriorKind::Mispibp { eta } => Some(eta),
    };
    TableRow {
        scenario: config.scenario,
        n: config.n,
        p: config.p,
        prior: config.prior.label().to_owned(),
        eta,
        beta_label: config.beta_label,
        master_seed: config.master_seed,
        replicates: records.len(),
        succeeded: f.len(),
        failed: records.len() - f.len(),
        f_norm_mean,
        f_norm_sd,
        k_hat_mean,
        k_hat_sd,
        sd_degenerate: f.len() < 2,
    }
}

/// The truth and the prior tree for one replicate.
pub fn replicate_setup(config: &ExperimentConfig, r: usize) -> Result<(BinaryFactorMatrix, RootedTree)> {
    let tree_seed = replicate_seed(config, STREAM_TREE, r);
    match config.scenario {
        Scenario::Sim1 => {
            let (z0, labels) = make_sim1_truth_with(config.n, &config.sim1_design)?;
            let tree = match config.prior {
                PriorKind::Ibp => flat_tree(config.n)?,
                PriorKind::Pibp { eta } => group_tree(&labels, eta)?,
                PriorKind::Mispibp { eta } => {
                    group_tree(&permuted_labels(&labels, tree_seed), eta)?
                }
            };
            Ok((z0, tree))
        }
        Scenario::Sim2 => {
            let z0 = make_sim2_truth(config.n, replicate_seed(config, STREAM_TRUTH, r))?;
            let tree = match config.prior {
                PriorKind::Ibp => flat_tree(config.n)?,
                PriorKind::Pibp { .. } => build_tree(&binary_source(&z0), Metric::Hamming)?.tree,
                PriorKind::Mispibp { .. } => permuted_tree(&binary_source(&z0), Metric::Hamming, tree_seed)?.tree,
            };
            Ok((z0, tree))
        }
    }
}

fn run_replicate(config: &ExperimentConfig, r: usize) -> ReplicateRecord {
    let data_seed = replicate_seed(config, STREAM_DATA, r);
    let chain_seed = replicate_seed(config, STREAM_CHAIN, r);
    let outcome = (|| -> Result<Outcome> {
        let (z0, tree) = replicate_setup(config, r)?;
        let x = generate_data(&z0, config.truth_params, config.p, data_seed)?;
        let mcmc = SamplerConfig { seed: chain_seed, ..config.mcmc.clone() };
        let run = run_chain(&x, &tree, &mcmc)?;
        let map = select_map_sample(&run.samples)?;
        Ok(Outcome::Ok {
            f_norm: similarity_error(&map.z, &z0)?,
            k_hat: truncated_feature_count(&map.z, config.min_share),
            k_plus: map.k_plus(),
            log_posterior: map.log_posterior,
            map_iteration: map.iteration,
        })
    })()
    .unwrap_or_else(|e| Outcome::Failed { error: e.to_string() });
    ReplicateRecord { replicate: r, data_seed, chain_seed, outcome }
}

/// Runs every replicate (in parallel when the `parallel` feature is on) and
/// aggregates in replicate order. A failing replicate is recorded and left
/// out of the summary.
pub fn run_replicated(config: &ExperimentConfig) -> Result<RowResult> {
    config.validate()?;
    if config.scenario == Scenario::Sim1 {
        make_sim1_truth_with(config.n, &config.sim1_design)?;
    }
    let start = Instant::now();
    #[cfg(feature = "parallel")]
    let records: Vec<ReplicateRecord> = {
        use rayon::prelude::*;
        (0..config.replicates).into_par_iter().map(|r| run_replicate(config, r)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let records: Vec<ReplicateRecord> = (0..config.replicates).map(|r| run_replicate(config, r)).collect();
    let row = aggregate(config, &records);
    Ok(RowResult { row, records, seconds: start.elapsed().as_secs_f64() })
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub rows: Vec<RowResult>,
}

impl ExperimentTable {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        for r in &self.rows {
            out.serialize(&r.row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_json<W: std::io::Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub prior: String,
    pub n: usize,
    pub p: usize,
    pub succeeded: usize,
    pub median_sq_error: f64,
    /// Median at this `p` over the median at the previous grid point.
    pub ratio_to_previous: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    pub detail: Vec<RowResult>,
}

impl ScalingTable {
    pub fn strictly_decreasing(&self, prior: &str) -> bool {
        let m: Vec<f64> = self.rows.iter().filter(|r| r.prior == prior).map(|r| r.median_sq_error).collect();
        m.windows(2).all(|w| w[1] < w[0])
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn median_sq(records: &[ReplicateRecord]) -> (usize, f64) {
    let sq: Vec<f64> = records
        .iter()
        .filter_map(|r| match r.outcome {
            Outcome::Ok { f_norm, .. } => Some(f_norm * f_norm),
            Outcome::Failed { .. } => None,
        })
        .collect();
    let count = sq.len();
    (count, if count == 0 { f64::NAN } else { Data::new(sq).median() })
}

/// Replicated fits over a grid of `p` at the base configuration's `n`, for each
/// prior in `priors`.
pub fn run_scaling(base: &ExperimentConfig, priors: &[PriorKind], ps: &[usize]) -> Result<ScalingTable> {
    if ps.len() < 3 {
        return Err(Error::Config(format!("the scaling grid needs at least 3 values of p, got {}", ps.len())));
    }
    let mut rows = vec![];
    let mut detail = vec![];
    for prior in priors {
        let mut prev: Option<f64> = None;
        for &p in ps {
            let config = ExperimentConfig { p, prior: *prior, ..base.clone() };
            let result = run_replicated(&config)?;
            let (succeeded, median) = median_sq(&result.records);
            rows.push(ScalingRow {
                prior: prior.label().to_owned(),
                n: base.n,
                p,
                succeeded,
                median_sq_error: median,
                ratio_to_previous: prev.map(|m| median / m),
            });
            prev = Some(median);
            detail.push(result);
        }
    }
    Ok(ScalingTable { rows, detail })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorMassRow {
    pub truth: String,
    pub eta: f64,
    pub draws: u64,
    pub hits: u64,
    pub estimate: f64,
    pub std_err: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Rule-of-three 95% bound, reported instead of a zero estimate.
    pub upper_bound: Option<f64>,
}

/// A small truth for the prior-mass study, with the partition used for the
/// two-group trees.
#[derive(Clone, Debug)]
pub struct MassTruth {
    pub label: String,
    pub z0: BinaryFactorMatrix,
    pub partition: GroupPartition,
}

/// For `n` even: one feature per half (no shared features), and two features
/// that each take one sample from each half (all features shared).
pub fn standard_mass_truths(n: usize) -> Result<Vec<MassTruth>> {
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("the standard truths need an even n ≥ 4, got {n}")));
    }
    let half = n / 2;
    let partition = GroupPartition::halves(n);
    let indicator = |set: &[usize]| (0..n).map(|i| u8::from(set.contains(&i))).collect::<Vec<u8>>();
    let first: Vec<usize> = (0..half).collect();
    let second: Vec<usize> = (half..n).collect();
    let well = BinaryFactorMatrix::from_columns(n, vec![indicator(&first), indicator(&second)])?;
    let mis = BinaryFactorMatrix::from_columns(n, vec![indicator(&[0, half]), indicator(&[1, half + 1])])?;
    Ok(vec![
        MassTruth { label: "well_specified".into(), z0: well, partition: partition.clone() },
        MassTruth { label: "mis_specified".into(), z0: mis, partition },
    ])
}

pub const MASS_MAX_N: usize = 10;
pub const MASS_MAX_K: usize = 3;

/// Monte-Carlo prior mass of each truth under two-group trees over the η grid.
/// Each (truth, η) cell uses its own derived random stream.
pub fn run_prior_mass_study(
    truths: &[MassTruth],
    etas: &[f64],
    draws: u64,
    alpha_mode: AlphaMode,
    master_seed: u64,
) -> Result<Vec<PriorMassRow>> {
    let mut rows = vec![];
    for (t_idx, truth) in truths.iter().enumerate() {
        let n = truth.z0.n();
        if n > MASS_MAX_N || truth.z0.k() > MASS_MAX_K {
            return Err(Error::Config(format!(
                "prior-mass truths must have n ≤ {MASS_MAX_N} and K ≤ {MASS_MAX_K}, got n={n} K={}",
                truth.z0.k()
            )));
        }
        let d = factor_decomposition(&truth.z0, &truth.partition)?;
        debug_assert_eq!(d.total(), truth.z0.k());
        for (e_idx, &eta) in etas.iter().enumerate() {
            let tree = two_group_tree(n, eta, &truth.partition)?;
            let seed = derive_seed(master_seed, t_idx as u64 + 16, e_idx as u64);
            let est = prior_mass_estimate(&tree, &truth.z0, draws, alpha_mode, &mut ChaCha8Rng::seed_from_u64(seed))?;
            let (ci_low, ci_high) = est.interval(1.96);
            rows.push(PriorMassRow {
                truth: truth.label.clone(),
                eta,
                draws,
                hits: est.hits,
                estimate: est.estimate,
                std_err: est.std_err,
                ci_low,
                ci_high,
                upper_bound: (est.hits == 0).then(|| est.upper_bound_95()),
            });
        }
    }
    Ok(rows)
}

pub fn write_mass_csv<W: std::io::Write>(rows: &[PriorMassRow], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim1_truth_shape() {
        let (z0, labels) = make_sim1_truth(192).unwrap();
        assert_eq!((z0.n(), z0.k()), (192, 9));
        assert_eq!(truncated_feature_count(&z0, 5), 9);
        for g in 0..8 {
            assert_eq!(labels.iter().filter(|&&l| l == g).count(), 24);
        }
        // The first six columns separate the eight subgroups.
        let mut patterns: Vec<Vec<u8>> = (0..8).map(|g| (0..6).map(|k| z0.get(g * 24, k)).collect()).collect();
        patterns.sort();
        patterns.dedup();
        assert_eq!(patterns.len(), 8);
        let d = factor_decomposition(&z0, &sim1_superblocks(&labels)).unwrap();
        assert_eq!((d.k01, d.k02, d.k0_star), (3, 3, 3));
        assert!(make_sim1_truth(100).is_err());
    }

    #[test]
    fn sim2_truth_shape() {
        let z0 = make_sim2_truth(120, 3).unwrap();
        assert_eq!((z0.n(), z0.k()), (120, 9));
        for k in 0..4 {
            let s = z0.column(k).iter().filter(|&&v| v == 1).count() as f64;
            let sd = (120.0 * 0.3 * 0.7f64).sqrt();
            assert!((s - 36.0).abs() < 3.0 * sd, "column {k}: {s}");
        }
        for i in 0..120 {
            assert_eq!((4..9).map(|k| z0.get(i, k)).sum::<u8>(), 1);
        }
        assert!(make_sim2_truth(9, 0).is_err());
        assert_eq!(make_sim2_truth(120, 3).unwrap(), z0);
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a = derive_seed(7, STREAM_DATA, 0);
        assert_eq!(a, derive_seed(7, STREAM_DATA, 0));
        assert_ne!(a, derive_seed(7, STREAM_DATA, 1));
        assert_ne!(a, derive_seed(7, STREAM_CHAIN, 0));
        assert_ne!(a, derive_seed(8, STREAM_DATA, 0));
    }

    fn small(prior: PriorKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(Scenario::Sim1, 16, 10, prior);
        c.replicates = 3;
        c.mcmc.iterations = 30;
        c.mcmc.burn_in = 10;
        c
    }

    #[test]
    fn replicated_run_is_reproducible_and_aggregates_match() {
        let c = small(PriorKind::Pibp { eta: 0.8 });
        let a = run_replicated(&c).unwrap();
        let b = run_replicated(&c).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.row, b.row);
        assert_eq!(aggregate(&c, &a.records), a.row);
        assert_eq!(a.row.succeeded, 3);
        let json = serde_json::to_string(&ExperimentTable { rows: vec![a.clone()] }).unwrap();
        let back: ExperimentTable = serde_json::from_str(&json).unwrap();
        assert_eq!(aggregate(&c, &back.rows[0].records), a.row);
    }

    #[test]
    fn priors_share_data_seeds() {
        let a = run_replicated(&small(PriorKind::Ibp)).unwrap();
        let b = run_replicated(&small(PriorKind::Mispibp { eta: 0.5 })).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!((x.data_seed, x.chain_seed), (y.data_seed, y.chain_seed));
        }
    }

    #[test]
    fn single_replicate_flags_zero_sd() {
        let mut c = small(PriorKind::Ibp);
        c.replicates = 1;
        let row = run_replicated(&c).unwrap().row;
        assert!(row.sd_degenerate);
        assert_eq!(row.f_norm_sd, 0.0);
    }

    #[test]
    fn failures_are_recorded_not_dropped() {
        let c = small(PriorKind::Ibp);
        let mut records = run_replicated(&c).unwrap().records;
        records[1].outcome = Outcome::Failed { error: "boom".into() };
        let row = aggregate(&c, &records);
        assert_eq!((row.succeeded, row.failed, row.replicates), (2, 1, 3));
    }

    #[test]
    fn config_errors() {
        let mut c = small(PriorKind::Ibp);
        c.replicates = 0;
        assert!(run_replicated(&c).is_err());
        let mut c = small(PriorKind::Pibp { eta: 1.0 });
        c.replicates = 1;
        assert!(run_replicated(&c).is_err());
        let mut c = small(PriorKind::Ibp);
        c.n = 20;
        assert!(run_replicated(&c).is_err());
        assert!(run_scaling(&small(PriorKind::Ibp), &[PriorKind::Ibp], &[10]).is_err());
    }

    #[test]
    fn sim2_trees() {
        let mut c = ExperimentConfig::new(Scenario::Sim2, 20, 5, PriorKind::Pibp { eta: 0.8 });
        let (_, t) = replicate_setup(&c, 0).unwrap();
        assert_eq!(t.leaf_count(), 20);
        c.prior = PriorKind::Mispibp { eta: 0.8 };
        let (_, m) = replicate_setup(&c, 0).unwrap();
        assert_ne!(crate::newick::to_newick(&t), crate::newick::to_newick(&m));
    }

    #[test]
    fn mass_study_reports_upper_bounds() {
        let truths = standard_mass_truths(6).unwrap();
        let rows = run_prior_mass_study(&truths, &[0.0, 0.5], 200, AlphaMode::Fixed(1.0), 1).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert!(r.ci_low <= r.estimate && r.estimate <= r.ci_high);
            assert_eq!(r.upper_bound.is_some(), r.hits == 0);
        }
        let big = MassTruth {
            label: "big".into(),
            z0: BinaryFactorMatrix::from_columns(12, vec![vec![1; 12]]).unwrap(),
            partition: GroupPartition::halves(12),
        };
        assert!(run_prior_mass_study(&[big], &[0.0], 10, AlphaMode::Fixed(1.0), 0).is_err());
        let d = factor_decomposition(&truths[1].z0, &truths[1].partition).unwrap();
        assert_eq!((d.k0_star, d.total()), (2, 2));
    }
}
