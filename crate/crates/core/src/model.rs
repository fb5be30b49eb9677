//! The binary factor model `X = Z A + E` and the feature-similarity algebra
//! built on `Z Zᵀ`.
//!
//! Sample indices are 0-based throughout the Rust API.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `n × K` binary matrix stored column-wise. All-zero columns are never
/// stored, so `k()` is the number of nonzero features K⁺. Column order carries
/// no meaning.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryFactorMatrix {
    n: usize,
    columns: Vec<Vec<u8>>,
}

impl BinaryFactorMatrix {
    pub fn empty(n: usize) -> Self {
        Self { n, columns: Vec::new() }
    }

    /// Builds a matrix from columns, dropping all-zero ones.
    pub fn from_columns(n: usize, columns: Vec<Vec<u8>>) -> Result<Self> {
        for (k, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "column {k} has length {} but n = {n}",
                    col.len()
                )));
            }
            if let Some(v) = col.iter().find(|&&v| v > 1) {
                return Err(Error::InvalidParameter(format!(
                    "column {k} holds non-binary entry {v}"
                )));
            }
        }
        let columns = columns
            .into_iter()
            .filter(|c| c.contains(&1))
            .collect();
        Ok(Self { n, columns })
    }

    /// Builds a matrix from `n` rows of equal length.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != k) {
            return Err(Error::DimensionMismatch(format!(
                "row {i} has length {} but row 0 has {k}",
                rows[i].len()
            )));
        }
        let columns = (0..k).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
        Self::from_columns(n, columns)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<u8>] {
        &self.columns
    }

    pub fn column(&self, k: usize) -> &[u8] {
        &self.columns[k]
    }

    pub fn get(&self, i: usize, k: usize) -> u8 {
        self.columns[k][i]
    }

    pub fn column_sums(&self) -> Vec<usize> {
        self.columns
            .iter()
            .map(|c| c.iter().map(|&v| v as usize).sum())
            .collect()
    }

    /// Row-major copy, `n` rows of length `k`.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| self.columns.iter().map(|c| c[i]).collect())
            .collect()
    }

    /// Columns sorted lexicographically (descending), a canonical
    /// representative of the equivalence class `[Z]`.
    pub fn canonical(&self) -> Self {
        let mut columns = self.columns.clone();
        columns.sort_by(|a, b| b.cmp(a));
        Self { n: self.n, columns }
    }

    /// Applies a column permutation; `perm[j]` is the source column of output column `j`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let columns = perm.iter().map(|&j| self.columns[j].clone()).collect();
        Self { n: self.n, columns }
    }

    /// Applies a row permutation; output row `i` is input row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let columns = self
            .columns
            .iter()
            .map(|c| perm.iter().map(|&i| c[i]).collect())
            .collect();
        Self { n: self.n, columns }
    }
}

/// `Z Zᵀ`: entry `(i, j)` counts the features shared by samples `i` and `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSimilarityMatrix {
    n: usize,
    entries: Vec<u32>,
}

impl FeatureSimilarityMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, entries: vec![0; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.entries[i * self.n + j]
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[u32] {
        &self.entries
    }

    /// Squared Frobenius distance to another similarity matrix of the same size.
    pub fn squared_distance(&self, other: &Self) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub sigma_a_sq: f64,
    pub sigma_x_sq: f64,
}

impl NoiseParams {
    pub fn new(sigma_a_sq: f64, sigma_x_sq: f64) -> Result<Self> {
        for (name, v) in [("sigma_a_sq", sigma_a_sq), ("sigma_x_sq", sigma_x_sq)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self { sigma_a_sq, sigma_x_sq })
    }

    /// σ_X² / σ_A², the ridge added to `ZᵀZ` in the collapsed likelihood.
    pub fn ratio(&self) -> f64 {
        self.sigma_x_sq / self.sigma_a_sq
    }
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { sigma_a_sq: 1.0, sigma_x_sq: 1.0 }
    }
}

/// Observed `n × p` real matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    n: usize,
    p: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(n: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * p {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {n}×{p} matrix",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite entry at row {}, column {}",
                pos / p.max(1),
                pos % p.max(1)
            )));
        }
        Ok(Self { n, p, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::DimensionMismatch(format!(
                "row {i} has length {} but row 0 has {p}",
                rows[i].len()
            )));
        }
        Self::new(n, p, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let values = perm.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self { n: self.n, p: self.p, values }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// A split of `{0..n}` into two disjoint groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    in_first: Vec<bool>,
}

impl GroupPartition {
    pub fn new(n: usize, first: &[usize], second: &[usize]) -> Result<Self> {
        let mut seen = vec![0u8; n];
        for &i in first.iter().chain(second) {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            seen[i] += 1;
        }
        if let Some(i) = seen.iter().position(|&c| c != 1) {
            return Err(Error::InvalidParameter(format!(
                "sample {i} appears {} times across the two groups",
                seen[i]
            )));
        }
        let mut in_first = vec![false; n];
        for &i in first {
            in_first[i] = true;
        }
        Ok(Self { in_first })
    }

    /// `{0..n/2}` and `{n/2..n}` (rounding the first group down).
    pub fn halves(n: usize) -> Self {
        Self { in_first: (0..n).map(|i| i < n / 2).collect() }
    }

    /// From per-sample labels in `{0, 1}`.
    pub fn from_labels(labels: &[u8]) -> Result<Self> {
        if let Some(&l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidParameter(format!("group label {l} is not 0 or 1")));
        }
        Ok(Self { in_first: labels.iter().map(|&l| l == 0).collect() })
    }

    pub fn n(&self) -> usize {
        self.in_first.len()
    }

    pub fn in_first(&self, i: usize) -> bool {
        self.in_first[i]
    }

    pub fn first(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.in_first[i]).collect()
    }

    pub fn second(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| !self.in_first[i]).collect()
    }

    /// Group label per sample (0 for the first group).
    pub fn labels(&self) -> Vec<usize> {
        self.in_first.iter().map(|&f| usize::from(!f)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorDecomposition {
    pub k01: usize,
    pub k02: usize,
    pub k0_star: usize,
}

impl FactorDecomposition {
    pub fn total(&self) -> usize {
        self.k01 + self.k02 + self.k0_star
    }
}

pub fn feature_similarity(z: &BinaryFactorMatrix) -> FeatureSimilarityMatrix {
    let n = z.n();
    let mut out = FeatureSimilarityMatrix::zeros(n);
    let mut active = Vec::with_capacity(n);
    for col in z.columns() {
        active.clear();
        active.extend((0..n).filter(|&i| col[i] == 1));
        for &i in &active {
            for &j in &active {
                out.entries[i * n + j] += 1;
            }
        }
    }
    out
}

/// `d_i = Σ_{j≠i} ξ_ij`.
pub fn degree(z: &BinaryFactorMatrix, i: usize) -> Result<u64> {
    if i >= z.n() {
        return Err(Error::IndexOutOfRange { index: i, len: z.n() });
    }
    Ok(z.columns()
        .iter()
        .filter(|c| c[i] == 1)
        .map(|c| c.iter().map(|&v| v as u64).sum::<u64>() - 1)
        .sum())
}

/// Draws `X = Z₀ A + E` with `A` entries iid `N(0, σ_A²)` and `E` entries iid
/// `N(0, σ_X²)`. `A` is drawn first (row-major), then `E`.
pub fn generate_data(z0: &BinaryFactorMatrix, params: NoiseParams, p: usize, seed: u64) -> Result<DataMatrix> {
    if p == 0 {
        return Err(Error::InvalidParameter("p must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k) = (z0.n(), z0.k());
    let a_dist = Normal::new(0.0, params.sigma_a_sq.sqrt()).expect("validated variance");
    let e_dist = Normal::new(0.0, params.sigma_x_sq.sqrt()).expect("validated variance");
    let loadings: Vec<f64> = (0..k * p).map(|_| a_dist.sample(&mut rng)).collect();
    let mut values: Vec<f64> = (0..n * p).map(|_| e_dist.sample(&mut rng)).collect();
    for (c, col) in z0.columns().iter().enumerate() {
        let load = &loadings[c * p..(c + 1) * p];
        for i in (0..n).filter(|&i| col[i] == 1) {
            for (x, a) in values[i * p..(i + 1) * p].iter_mut().zip(load) {
                *x += a;
            }
        }
    }
    DataMatrix::new(n, p, values)
}

/// Classifies each column as unique to the first group, unique to the second,
/// or shared across both.
pub fn factor_decomposition(z0: &BinaryFactorMatrix, partition: &GroupPartition) -> Result<FactorDecomposition> {
    if partition.n() != z0.n() {
        return Err(Error::DimensionMismatch(format!(
            "partition covers {} samples, matrix has {}",
            partition.n(),
            z0.n()
        )));
    }
    let mut out = FactorDecomposition { k01: 0, k02: 0, k0_star: 0 };
    for col in z0.columns() {
        let mut hits = (false, false);
        for (i, _) in col.iter().enumerate().filter(|(_, &v)| v == 1) {
            if partition.in_first(i) {
                hits.0 = true;
            } else {
                hits.1 = true;
            }
        }
        match hits {
            (true, true) => out.k0_star += 1,
            (true, false) => out.k01 += 1,
            (false, true) => out.k02 += 1,
            (false, false) => unreachable!("stored columns are nonzero"),
        }
    }
    Ok(out)
}

fn check_same_n(a: &BinaryFactorMatrix, b: &BinaryFactorMatrix) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch(format!("{} rows vs {} rows", a.n(), b.n())));
    }
    Ok(())
}

/// `‖Z₀Z₀ᵀ − Z*Z*ᵀ‖_F`.
pub fn approximation_error(z0: &BinaryFactorMatrix, z_star: &BinaryFactorMatrix) -> Result<f64> {
    check_same_n(z0, z_star)?;
    Ok(feature_similarity(z0)
        .squared_distance(&feature_similarity(z_star))
        .sqrt())
}

/// `n^{-1/2} ‖Z Zᵀ − Z₀Z₀ᵀ‖_F`, the F-norm error of the simulation tables.
pub fn similarity_error(z: &BinaryFactorMatrix, z0: &BinaryFactorMatrix) -> Result<f64> {
    check_same_n(z, z0)?;
    if z.n() == 0 {
        return Ok(0.0);
    }
    Ok(approximation_error(z, z0)? / (z.n() as f64).sqrt())
}

/// Number of features possessed by at least `min_share` samples.
pub fn truncated_feature_count(z: &BinaryFactorMatrix, min_share: usize) -> usize {
    z.column_sums().into_iter().filter(|&s| s >= min_share.max(1)).count()
}
