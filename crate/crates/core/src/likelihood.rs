//! Collapsed likelihood of the linear-Gaussian binary factor model.
//!
//! With the loadings integrated out every column of `X` is
//! `N(0, Σ)`, `Σ = σ_A² Z Zᵀ + σ_X² I`. Everything here works on the
//! `K × K` matrix `M = ZᵀZ + (σ_X²/σ_A²) I`:
//!
//! ```text
//! log det Σ   = (n − K) log σ_X² + K log σ_A² + log det M
//! tr(Σ⁻¹XXᵀ)  = (tr XᵀX − tr(M⁻¹ G Gᵀ)) / σ_X²,   G = ZᵀX
//! ```

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::model::{BinaryFactorMatrix, DataMatrix, NoiseParams};

/// Accepted moves between from-scratch refreshes of the floating-point caches.
pub const REFRESH_INTERVAL: usize = 100;

fn log_det_and_quad(gram: &DMatrix<f64>, h: &DMatrix<f64>, ridge: f64) -> Result<(f64, f64)> {
    let k = gram.nrows();
    if k == 0 {
        return Ok((0.0, 0.0));
    }
    let mut m = gram.clone();
    for d in 0..k {
        m[(d, d)] += ridge;
    }
    let chol: Cholesky<f64, Dyn> =
        Cholesky::new(m).ok_or_else(|| Error::Numerical("K×K Gram matrix is not positive definite".into()))?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad = chol.solve(h).trace();
    Ok((log_det, quad))
}

fn assemble(n: usize, p: usize, k: usize, params: NoiseParams, xtx: f64, log_det: f64, quad: f64) -> Result<f64> {
    let (n, p, k) = (n as f64, p as f64, k as f64);
    let log_det_sigma = (n - k) * params.sigma_x_sq.ln() + k * params.sigma_a_sq.ln() + log_det;
    let value = -0.5 * n * p * (2.0 * PI).ln() - 0.5 * p * log_det_sigma - 0.5 * (xtx - quad) / params.sigma_x_sq;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!("collapsed log-likelihood evaluated to {value}")))
    }
}

fn gram_of(columns: &[Vec<u8>]) -> DMatrix<f64> {
    let k = columns.len();
    DMatrix::from_fn(k, k, |a, b| {
        columns[a]
            .iter()
            .zip(&columns[b])
            .filter(|(&u, &v)| u == 1 && v == 1)
            .count() as f64
    })
}

fn cross_of(x: &DataMatrix, columns: &[Vec<u8>]) -> Vec<Vec<f64>> {
    columns
        .iter()
        .map(|col| {
            let mut g = vec![0.0; x.p()];
            for i in (0..x.n()).filter(|&i| col[i] == 1) {
                for (acc, v) in g.iter_mut().zip(x.row(i)) {
                    *acc += v;
                }
            }
            g
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn outer_of(g: &[Vec<f64>]) -> DMatrix<f64> {
    let k = g.len();
    let mut h = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let v = dot(&g[a], &g[b]);
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    h
}

fn check_columns(x: &DataMatrix, columns: &[Vec<u8>]) -> Result<()> {
    if let Some(c) = columns.iter().find(|c| c.len() != x.n()) {
        return Err(Error::DimensionMismatch(format!(
            "factor column of length {} against {} data rows",
            c.len(),
            x.n()
        )));
    }
    Ok(())
}

/// Σ_j log N(x_·j; 0, σ_A² ZZᵀ + σ_X² I), evaluated through the `K × K` form.
///
/// `columns` may contain all-zero columns (they leave `Σ` unchanged).
pub fn collapsed_log_likelihood_columns(x: &DataMatrix, columns: &[Vec<u8>], params: NoiseParams) -> Result<f64> {
    check_columns(x, columns)?;
    let (n, p, k) = (x.n(), x.p(), columns.len());
    let xtx = x.frobenius_sq();
    if k >= n && n > 0 {
        return dense_log_likelihood(x, columns, params);
    }
    let gram = gram_of(columns);
    let h = outer_of(&cross_of(x, columns));
    let (log_det, quad) = log_det_and_quad(&gram, &h, params.ratio())?;
    assemble(n, p, k, params, xtx, log_det, quad)
}

pub fn collapsed_log_likelihood(x: &DataMatrix, z: &BinaryFactorMatrix, params: NoiseParams) -> Result<f64> {
    if x.n() != z.n() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} rows, factor matrix has {}",
            x.n(),
            z.n()
        )));
    }
    collapsed_log_likelihood_columns(x, z.columns(), params)
}

/// Direct `n × n` evaluation, used only when `K ≥ n`.
fn dense_log_likelihood(x: &DataMatrix, columns: &[Vec<u8>], params: NoiseParams) -> Result<f64> {
    let n = x.n();
    let sigma = DMatrix::from_fn(n, n, |i, j| {
        let shared = columns.iter().filter(|c| c[i] == 1 && c[j] == 1).count() as f64;
        params.sigma_a_sq * shared + if i == j { params.sigma_x_sq } else { 0.0 }
    });
    let chol = Cholesky::new(sigma).ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let xm = DMatrix::from_row_slice(n, x.p(), x.values());
    let solved = chol.solve(&xm);
    let quad = xm.component_mul(&solved).sum();
    let value = -0.5 * (n * x.p()) as f64 * (2.0 * PI).ln() - 0.5 * x.p() as f64 * log_det - 0.5 * quad;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!("dense log-likelihood evaluated to {value}")))
    }
}

/// Result of evaluating a single-entry flip, ready to be committed.
#[derive(Clone, Debug)]
pub struct FlipEval {
    i: usize,
    k: usize,
    delta: f64,
    new_value: f64,
    gram_row: Vec<f64>,
    h_row: Vec<f64>,
    sign: f64,
}

impl FlipEval {
    /// New log-likelihood minus current.
    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Result of evaluating the addition of one column.
#[derive(Clone, Debug)]
pub struct AddEval {
    delta: f64,
    new_value: f64,
    gram_row: Vec<f64>,
    h_row: Vec<f64>,
    g_row: Vec<f64>,
}

impl AddEval {
    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Row-`i` quantities for [`LikelihoodCache::row_value`].
#[derive(Clone, Debug)]
pub struct RowContext {
    i: usize,
    version: u64,
    old: Vec<f64>,
    inv: DMatrix<f64>,
    log_det: f64,
    h: DMatrix<f64>,
    b: Vec<f64>,
    s: f64,
    base_trace: f64,
}

/// Incrementally maintained `ZᵀZ`, `ZᵀX` and `(ZᵀX)(ZᵀX)ᵀ` for one chain.
///
/// Every mutating method bumps `version`; callers holding a version from
/// before a mutation get [`Error::StaleCache`].
#[derive(Clone, Debug)]
pub struct LikelihoodCache {
    n: usize,
    p: usize,
    params: NoiseParams,
    xtx: f64,
    gram: DMatrix<f64>,
    g: Vec<Vec<f64>>,
    h: DMatrix<f64>,
    value: f64,
    version: u64,
    since_refresh: usize,
    // x_i · G_k for the most recently queried row, valid for `row_version`.
    row_products: Option<(usize, u64, Vec<f64>)>,
}

impl LikelihoodCache {
    pub fn new(x: &DataMatrix, columns: &[Vec<u8>], params: NoiseParams) -> Result<Self> {
        check_columns(x, columns)?;
        let gram = gram_of(columns);
        let g = cross_of(x, columns);
        let h = outer_of(&g);
        let xtx = x.frobenius_sq();
        let (log_det, quad) = log_det_and_quad(&gram, &h, params.ratio())?;
        let value = assemble(x.n(), x.p(), columns.len(), params, xtx, log_det, quad)?;
        Ok(Self {
            n: x.n(),
            p: x.p(),
            params,
            xtx,
            gram,
            g,
            h,
            value,
            version: 0,
            since_refresh: 0,
            row_products: None,
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn params(&self) -> NoiseParams {
        self.params
    }

    pub fn k(&self) -> usize {
        self.gram.nrows()
    }

    fn check_version(&self, version: u64) -> Result<()> {
        if version != self.version {
            return Err(Error::StaleCache { cache: self.version, state: version });
        }
        Ok(())
    }

    fn value_for(&self, gram: &DMatrix<f64>, h: &DMatrix<f64>, params: NoiseParams) -> Result<f64> {
        let (log_det, quad) = log_det_and_quad(gram, h, params.ratio())?;
        assemble(self.n, self.p, gram.nrows(), params, self.xtx, log_det, quad)
    }

    fn products_for_row(&mut self, x: &DataMatrix, i: usize) -> &[f64] {
        let fresh = matches!(&self.row_products, Some((r, v, _)) if *r == i && *v == self.version);
        if !fresh {
            let xi = x.row(i);
            let prods = self.g.iter().map(|g| dot(xi, g)).collect();
            self.row_products = Some((i, self.version, prods));
        }
        &self.row_products.as_ref().expect("just filled").2
    }

    /// Evaluates flipping `z_ik`. `columns` is the current factor state.
    pub fn evaluate_flip(
        &mut self,
        x: &DataMatrix,
        columns: &[Vec<u8>],
        i: usize,
        k: usize,
        version: u64,
    ) -> Result<FlipEval> {
        self.check_version(version)?;
        let kk = self.k();
        if k >= kk || i >= self.n {
            return Err(Error::IndexOutOfRange { index: k.max(i), len: kk.max(self.n) });
        }
        let sign = if columns[k][i] == 1 { -1.0 } else { 1.0 };
        let xi_sq = dot(x.row(i), x.row(i));
        let prods = self.products_for_row(x, i).to_vec();

        let mut gram_row: Vec<f64> = (0..kk).map(|j| self.gram[(k, j)]).collect();
        let mut h_row: Vec<f64> = (0..kk).map(|j| self.h[(k, j)]).collect();
        for j in 0..kk {
            if j == k {
                gram_row[j] += sign;
                h_row[j] += 2.0 * sign * prods[k] + xi_sq;
            } else {
                gram_row[j] += sign * f64::from(columns[j][i]);
                h_row[j] += sign * prods[j];
            }
        }
        let mut gram = self.gram.clone();
        let mut h = self.h.clone();
        for j in 0..kk {
            gram[(k, j)] = gram_row[j];
            gram[(j, k)] = gram_row[j];
            h[(k, j)] = h_row[j];
            h[(j, k)] = h_row[j];
        }
        let new_value = self.value_for(&gram, &h, self.params)?;
        Ok(FlipEval { i, k, delta: new_value - self.value, new_value, gram_row, h_row, sign })
    }

    /// Applies an evaluated flip. `columns` must already hold the flipped entry.
    pub fn commit_flip(&mut self, x: &DataMatrix, columns: &[Vec<u8>], eval: FlipEval) -> Result<u64> {
        let FlipEval { i, k, new_value, gram_row, h_row, sign, .. } = eval;
        for (gk, xv) in self.g[k].iter_mut().zip(x.row(i)) {
            *gk += sign * xv;
        }
        for j in 0..self.k() {
            self.gram[(k, j)] = gram_row[j];
            self.gram[(j, k)] = gram_row[j];
            self.h[(k, j)] = h_row[j];
            self.h[(j, k)] = h_row[j];
        }
        self.value = new_value;
        // Keep the per-row products valid across flips within the same row.
        let old_version = self.version;
        self.version += 1;
        if let Some((r, v, prods)) = &mut self.row_products {
            if *r == i && *v == old_version {
                prods[k] += sign * dot(x.row(i), x.row(i));
                *v = self.version;
            }
        }
        self.after_move(x, columns)
    }

    /// Evaluates appending `column` as a new last column.
    pub fn evaluate_add(&mut self, x: &DataMatrix, columns: &[Vec<u8>], column: &[u8], version: u64) -> Result<AddEval> {
        self.check_version(version)?;
        let kk = self.k();
        let mut g_row = vec![0.0; self.p];
        for i in (0..self.n).filter(|&i| column[i] == 1) {
            for (acc, v) in g_row.iter_mut().zip(x.row(i)) {
                *acc += v;
            }
        }
        let mut gram_row: Vec<f64> = columns
            .iter()
            .map(|c| c.iter().zip(column).filter(|(&a, &b)| a == 1 && b == 1).count() as f64)
            .collect();
        gram_row.push(column.iter().filter(|&&v| v == 1).count() as f64);
        let mut h_row: Vec<f64> = self.g.iter().map(|g| dot(g, &g_row)).collect();
        h_row.push(dot(&g_row, &g_row));

        let gram = self.gram.clone().insert_row(kk, 0.0).insert_column(kk, 0.0);
        let h = self.h.clone().insert_row(kk, 0.0).insert_column(kk, 0.0);
        let (mut gram, mut h) = (gram, h);
        for j in 0..=kk {
            gram[(kk, j)] = gram_row[j];
            gram[(j, kk)] = gram_row[j];
            h[(kk, j)] = h_row[j];
            h[(j, kk)] = h_row[j];
        }
        let new_value = self.value_for(&gram, &h, self.params)?;
        Ok(AddEval { delta: new_value - self.value, new_value, gram_row, h_row, g_row })
    }

    /// Applies an evaluated addition; `columns` must already hold the new last column.
    pub fn commit_add(&mut self, x: &DataMatrix, columns: &[Vec<u8>], eval: AddEval) -> Result<u64> {
        let kk = self.k();
        let AddEval { new_value, gram_row, h_row, g_row, .. } = eval;
        self.gram = std::mem::replace(&mut self.gram, DMatrix::zeros(0, 0))
            .insert_row(kk, 0.0)
            .insert_column(kk, 0.0);
        self.h = std::mem::replace(&mut self.h, DMatrix::zeros(0, 0))
            .insert_row(kk, 0.0)
            .insert_column(kk, 0.0);
        for j in 0..=kk {
            self.gram[(kk, j)] = gram_row[j];
            self.gram[(j, kk)] = gram_row[j];
            self.h[(kk, j)] = h_row[j];
            self.h[(j, kk)] = h_row[j];
        }
        self.g.push(g_row);
        self.value = new_value;
        self.version += 1;
        self.after_move(x, columns)
    }

    /// Prepares `O(K²)` scoring of arbitrary values of row `i`.
    ///
    /// With `M₋ᵢ`, `G₋ᵢ` the quantities without row `i` and `w = M₋ᵢ⁻¹ z`,
    /// `c = zᵀw`, a candidate row `z` gives `log det M = log det M₋ᵢ + log(1 + c)`
    /// and `tr(M⁻¹GGᵀ)` by Sherman–Morrison.
    pub fn row_context(&self, x: &DataMatrix, columns: &[Vec<u8>], i: usize) -> Result<RowContext> {
        let kk = self.k();
        if i >= self.n {
            return Err(Error::IndexOutOfRange { index: i, len: self.n });
        }
        let old: Vec<f64> = columns.iter().map(|c| f64::from(c[i])).collect();
        let xi = x.row(i);
        let s = dot(xi, xi);
        let gx: Vec<f64> = self.g.iter().map(|g| dot(g, xi)).collect();
        let b: Vec<f64> = (0..kk).map(|a| gx[a] - s * old[a]).collect();
        let h = DMatrix::from_fn(kk, kk, |a, c| {
            self.h[(a, c)] - old[a] * gx[c] - gx[a] * old[c] + s * old[a] * old[c]
        });
        let ridge = self.params.ratio();
        let m = DMatrix::from_fn(kk, kk, |a, c| {
            self.gram[(a, c)] - old[a] * old[c] + if a == c { ridge } else { 0.0 }
        });
        let (inv, log_det) = if kk == 0 {
            (m, 0.0)
        } else {
            let chol = Cholesky::new(m)
                .ok_or_else(|| Error::Numerical("K×K Gram matrix is not positive definite".into()))?;
            let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            (chol.inverse(), log_det)
        };
        let base_trace = inv.component_mul(&h).sum();
        Ok(RowContext { i, version: self.version, old, inv, log_det, h, b, s, base_trace })
    }

    fn row_terms(&self, ctx: &RowContext, row: &[u8]) -> (f64, f64) {
        let kk = ctx.old.len();
        let mut w = vec![0.0; kk];
        for a in (0..kk).filter(|&a| row[a] == 1) {
            for (wv, iv) in w.iter_mut().zip(ctx.inv.column(a).iter()) {
                *wv += iv;
            }
        }
        let c: f64 = (0..kk).filter(|&a| row[a] == 1).map(|a| w[a]).sum();
        let wb = dot(&w, &ctx.b);
        let mut whw = 0.0;
        for a in 0..kk {
            if w[a] != 0.0 {
                let col = ctx.h.column(a);
                whw += w[a] * col.iter().zip(&w).map(|(h, w)| h * w).sum::<f64>();
            }
        }
        let trace = ctx.base_trace + 2.0 * wb + ctx.s * c - (whw + 2.0 * c * wb + ctx.s * c * c) / (1.0 + c);
        (ctx.log_det + c.ln_1p(), trace)
    }

    /// Log-likelihood with row `ctx.i` replaced by `row` (one entry per column).
    pub fn row_value(&self, ctx: &RowContext, row: &[u8]) -> Result<f64> {
        self.check_version(ctx.version)?;
        if row.len() != ctx.old.len() {
            return Err(Error::DimensionMismatch(format!("row of length {} for {} columns", row.len(), ctx.old.len())));
        }
        let (log_det, trace) = self.row_terms(ctx, row);
        assemble(self.n, self.p, row.len(), self.params, self.xtx, log_det, trace)
    }

    /// Brings the cache in line with `columns`, which may differ from the
    /// state the context was built from only in row `ctx.i`.
    pub fn commit_row(&mut self, x: &DataMatrix, columns: &[Vec<u8>], ctx: &RowContext) -> Result<u64> {
        self.check_version(ctx.version)?;
        let kk = ctx.old.len();
        let row: Vec<u8> = columns.iter().map(|c| c[ctx.i]).collect();
        let new: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
        let value = self.row_value(ctx, &row)?;
        let xi = x.row(ctx.i);
        for a in 0..kk {
            let d = new[a] - ctx.old[a];
            if d != 0.0 {
                for (g, v) in self.g[a].iter_mut().zip(xi) {
                    *g += d * v;
                }
            }
            for c in 0..kk {
                self.gram[(a, c)] += new[a] * new[c] - ctx.old[a] * ctx.old[c];
                self.h[(a, c)] = ctx.h[(a, c)] + ctx.b[a] * new[c] + new[a] * ctx.b[c] + ctx.s * new[a] * new[c];
            }
        }
        self.value = value;
        self.version += 1;
        self.row_products = None;
        self.after_move(x, columns)
    }

    /// Log-likelihood change from removing column `k`.
    pub fn evaluate_remove(&self, k: usize, version: u64) -> Result<f64> {
        self.check_version(version)?;
        let gram = self.gram.clone().remove_row(k).remove_column(k);
        let h = self.h.clone().remove_row(k).remove_column(k);
        Ok(self.value_for(&gram, &h, self.params)? - self.value)
    }

    /// Removes column `k`; `columns` must already have it removed.
    pub fn commit_remove(&mut self, x: &DataMatrix, columns: &[Vec<u8>], k: usize) -> Result<u64> {
        self.gram = std::mem::replace(&mut self.gram, DMatrix::zeros(0, 0))
            .remove_row(k)
            .remove_column(k);
        self.h = std::mem::replace(&mut self.h, DMatrix::zeros(0, 0))
            .remove_row(k)
            .remove_column(k);
        self.g.remove(k);
        self.value = self.value_for(&self.gram, &self.h, self.params)?;
        self.version += 1;
        self.after_move(x, columns)
    }

    /// Log-likelihood at different noise parameters, same `Z`.
    pub fn evaluate_params(&self, params: NoiseParams) -> Result<f64> {
        self.value_for(&self.gram, &self.h, params)
    }

    pub fn set_params(&mut self, params: NoiseParams) -> Result<u64> {
        self.value = self.value_for(&self.gram, &self.h, params)?;
        self.params = params;
        self.version += 1;
        Ok(self.version)
    }

    fn after_move(&mut self, x: &DataMatrix, columns: &[Vec<u8>]) -> Result<u64> {
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_INTERVAL {
            self.refresh(x, columns)?;
        }
        Ok(self.version)
    }

    /// Rebuilds every cache from scratch.
    pub fn refresh(&mut self, x: &DataMatrix, columns: &[Vec<u8>]) -> Result<u64> {
        let version = self.version + 1;
        *self = Self::new(x, columns, self.params)?;
        self.version = version;
        Ok(version)
    }

    /// Compares the cached value with a from-scratch evaluation.
    pub fn verify(&self, x: &DataMatrix, columns: &[Vec<u8>], rel_tol: f64) -> Result<()> {
        let fresh = collapsed_log_likelihood_columns(x, columns, self.params)?;
        let err = (fresh - self.value).abs() / fresh.abs().max(1.0);
        if err > rel_tol || self.k() != columns.len() {
            return Err(Error::Numerical(format!(
                "cached log-likelihood {} disagrees with recomputation {fresh} (rel. err {err:e})",
                self.value
            )));
        }
        Ok(())
    }
}
