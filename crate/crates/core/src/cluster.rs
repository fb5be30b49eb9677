//! Agglomerative clustering of sample rows and conversion of the resulting
//! dendrogram into a unit-depth tree.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BinaryFactorMatrix, DataMatrix};
use crate::tree::{flat_tree, RootedTree};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Number of coordinates that differ.
    Hamming,
    Euclidean,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Hamming => a.iter().zip(b).filter(|(x, y)| x != y).count() as f64,
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        }
    }
}

/// One agglomeration step. Cluster ids follow the usual convention: `0..n`
/// are the samples and merge `j` creates cluster `n + j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    n: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn max_height(&self) -> f64 {
        self.merges.last().map_or(0.0, |m| m.height)
    }
}

/// Rows of a binary matrix as real vectors, for clustering.
pub fn binary_source(z: &BinaryFactorMatrix) -> DataMatrix {
    let rows: Vec<Vec<f64>> = z.to_rows().into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
    DataMatrix::new(z.n(), z.k(), rows.concat()).expect("binary entries are finite")
}

fn pairwise(source: &DataMatrix, metric: Metric) -> Vec<f64> {
    let n = source.n();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = metric.distance(source.row(i), source.row(j));
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Complete-linkage agglomerative clustering. A cluster lives in the slot of
/// its smallest member, and among equally close pairs the one with the lowest
/// slot indices merges first.
pub fn hierarchical_dendrogram(source: &DataMatrix, metric: Metric) -> Result<Dendrogram> {
    let n = source.n();
    if n < 2 {
        return Err(Error::InvalidParameter(format!("clustering needs at least 2 rows, got {n}")));
    }
    let mut d = pairwise(source, metric);
    let mut active = vec![true; n];
    let mut id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for i in (0..n).filter(|&i| active[i]) {
            for j in (i + 1..n).filter(|&j| active[j]) {
                if d[i * n + j] < best.0 {
                    best = (d[i * n + j], i, j);
                }
            }
        }
        let (h, i, j) = best;
        if let Some(prev) = merges.last().map(|m: &Merge| m.height) {
            if h < prev {
                return Err(Error::Numerical(format!("merge heights decreased from {prev} to {h}")));
            }
        }
        let (a, b) = (id[i].min(id[j]), id[i].max(id[j]));
        merges.push(Merge { a, b, height: h, size: size[i] + size[j] });
        for k in (0..n).filter(|&k| active[k] && k != i && k != j) {
            let v = d[k * n + i].max(d[k * n + j]);
            d[k * n + i] = v;
            d[i * n + k] = v;
        }
        active[j] = false;
        id[i] = n + step;
        size[i] += size[j];
    }
    Ok(Dendrogram { n, merges })
}

/// A tree built from a dendrogram. `degenerate` marks the flat fallback used
/// when every merge happens at height zero.
#[derive(Clone, Debug)]
pub struct BuiltTree {
    pub tree: RootedTree,
    pub degenerate: bool,
}

/// Internal node depth is `1 − h / h_max`, so the final merge becomes the root
/// and leaves sit at depth one.
pub fn dendrogram_to_tree(dend: &Dendrogram) -> Result<BuiltTree> {
    let n = dend.n;
    let h_max = dend.max_height();
    if h_max <= 0.0 {
        return Ok(BuiltTree { tree: flat_tree(n)?, degenerate: true });
    }
    let m = 2 * n - 1;
    let mut parent = vec![None; m];
    let mut height = vec![0.0; m];
    for (j, mg) in dend.merges.iter().enumerate() {
        let v = n + j;
        height[v] = mg.height;
        parent[mg.a] = Some(v);
        parent[mg.b] = Some(v);
    }
    let edge_length = (0..m).map(|v| parent[v].map_or(0.0, |p| (height[p] - height[v]) / h_max)).collect();
    let leaf_sample = (0..m).map(|v| (v < n).then_some(v)).collect();
    let tree = RootedTree::from_parents(parent, edge_length, leaf_sample)?;
    Ok(BuiltTree { tree, degenerate: false })
}

pub fn build_tree(source: &DataMatrix, metric: Metric) -> Result<BuiltTree> {
    dendrogram_to_tree(&hierarchical_dendrogram(source, metric)?)
}

/// Clusters the rows in the order `perm` (row `j` of the clustered matrix is
/// source row `perm[j]`) and then hangs sample `j` on leaf `j`. The tree keeps
/// the shape of a real clustering but carries no information about which
/// samples are alike.
pub fn permuted_tree_with(source: &DataMatrix, metric: Metric, perm: &[usize]) -> Result<BuiltTree> {
    let n = source.n();
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::InvalidParameter(format!("not a permutation of 0..{n}")));
    }
    build_tree(&source.permute_rows(perm), metric)
}

pub fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

pub fn permuted_tree(source: &DataMatrix, metric: Metric, seed: u64) -> Result<BuiltTree> {
    permuted_tree_with(source, metric, &seeded_permutation(source.n(), seed))
}

/// Group labels reassigned by a seeded shuffle of the samples, for group
/// trees that ignore the true grouping.
pub fn permuted_labels(labels: &[usize], seed: u64) -> Vec<usize> {
    seeded_permutation(labels.len(), seed).into_iter().map(|i| labels[i]).collect()
}
