//! Rooted trees whose leaves are the samples, with every root-to-leaf path
//! of total length one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GroupPartition;

/// Tolerance on the unit root-to-leaf depth.
pub const DEPTH_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootedTree {
    parent: Vec<Option<usize>>,
    edge_length: Vec<f64>,
    children: Vec<Vec<usize>>,
    leaf_sample: Vec<Option<usize>>,
    sample_leaf: Vec<usize>,
    root: usize,
    postorder: Vec<usize>,
}

impl RootedTree {
    /// Builds and fully validates a tree. `parent[v]` is `None` only for the
    /// root, `edge_length[v]` is the length of the edge above `v` (ignored for
    /// the root) and `leaf_sample[v]` maps leaves to 0-based sample indices.
    pub fn from_parents(
        parent: Vec<Option<usize>>,
        edge_length: Vec<f64>,
        leaf_sample: Vec<Option<usize>>,
    ) -> Result<Self> {
        let tree = Self::structure(parent, edge_length, leaf_sample)?;
        validate_tree(&tree)?;
        Ok(tree)
    }

    /// Structural checks only (single root, acyclic, leaf map); depths are not checked.
    pub(crate) fn structure(
        parent: Vec<Option<usize>>,
        mut edge_length: Vec<f64>,
        leaf_sample: Vec<Option<usize>>,
    ) -> Result<Self> {
        let m = parent.len();
        if edge_length.len() != m || leaf_sample.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{m} parents, {} edge lengths, {} leaf labels",
                edge_length.len(),
                leaf_sample.len()
            )));
        }
        let roots: Vec<usize> = (0..m).filter(|&v| parent[v].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidParameter(format!("tree must have exactly one root, found {}", roots.len())));
        }
        let root = roots[0];
        edge_length[root] = 0.0;
        let mut children = vec![Vec::new(); m];
        for (v, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= m {
                    return Err(Error::IndexOutOfRange { index: p, len: m });
                }
                children[p].push(v);
            }
        }
        for (v, &len) in edge_length.iter().enumerate() {
            if !(len.is_finite() && len >= 0.0) {
                return Err(Error::InvalidParameter(format!("edge above node {v} has length {len}")));
            }
        }
        // Walking up from every node must reach the root within m steps.
        for start in 0..m {
            let mut v = start;
            let mut steps = 0;
            while let Some(p) = parent[v] {
                v = p;
                steps += 1;
                if steps > m {
                    return Err(Error::Cycle(start));
                }
            }
        }
        let mut postorder = Vec::with_capacity(m);
        let mut stack = vec![(root, false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                postorder.push(v);
            } else {
                stack.push((v, true));
                for &c in children[v].iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        let mut n = 0;
        for v in 0..m {
            let is_leaf = children[v].is_empty();
            match (is_leaf, leaf_sample[v]) {
                (true, Some(_)) => n += 1,
                (true, None) => return Err(Error::LeafMapping(format!("leaf node {v} has no sample"))),
                (false, Some(s)) => {
                    return Err(Error::LeafMapping(format!("internal node {v} is labelled with sample {s}")))
                }
                (false, None) => {}
            }
        }
        let mut sample_leaf = vec![usize::MAX; n];
        for v in 0..m {
            if let Some(s) = leaf_sample[v] {
                if s >= n {
                    return Err(Error::LeafMapping(format!("sample index {s} out of range for {n} leaves")));
                }
                if sample_leaf[s] != usize::MAX {
                    return Err(Error::LeafMapping(format!("sample {s} is mapped to two leaves")));
                }
                sample_leaf[s] = v;
            }
        }
        Ok(Self { parent, edge_length, children, leaf_sample, sample_leaf, root, postorder })
    }

    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    /// Number of leaves, i.e. samples.
    pub fn leaf_count(&self) -> usize {
        self.sample_leaf.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn edge_length(&self, v: usize) -> f64 {
        self.edge_length[v]
    }

    pub fn leaf_sample(&self, v: usize) -> Option<usize> {
        self.leaf_sample[v]
    }

    pub fn leaf_of_sample(&self, sample: usize) -> usize {
        self.sample_leaf[sample]
    }

    /// Nodes with every child before its parent.
    pub fn postorder(&self) -> &[usize] {
        &self.postorder
    }

    /// Sum of all edge lengths.
    pub fn total_length(&self) -> f64 {
        self.edge_length.iter().sum()
    }

    /// Distance from the root to every node.
    pub fn depths(&self) -> Vec<f64> {
        let mut depth = vec![0.0; self.node_count()];
        for &v in self.postorder.iter().rev() {
            if let Some(p) = self.parent[v] {
                depth[v] = depth[p] + self.edge_length[v];
            }
        }
        depth
    }

    /// Depth of the deepest common ancestor of two samples.
    pub fn shared_depth(&self, a: usize, b: usize) -> f64 {
        let depths = self.depths();
        let mut ancestors = std::collections::HashSet::new();
        let mut v = self.sample_leaf[a];
        ancestors.insert(v);
        while let Some(p) = self.parent[v] {
            ancestors.insert(p);
            v = p;
        }
        let mut w = self.sample_leaf[b];
        while !ancestors.contains(&w) {
            w = self.parent[w].expect("root is a common ancestor");
        }
        depths[w]
    }

    /// Relabels leaves: the leaf currently holding sample `s` gets sample `perm[s]`.
    pub fn relabel_samples(&self, perm: &[usize]) -> Result<Self> {
        let leaf_sample = self.leaf_sample.iter().map(|s| s.map(|s| perm[s])).collect();
        Self::from_parents(self.parent.clone(), self.edge_length.clone(), leaf_sample)
    }

    /// Rescales so every root-to-leaf path has length one: all edges are
    /// divided by the maximum leaf depth, then terminal edges of shallower
    /// leaves are stretched to reach depth one.
    pub fn normalize_depth(mut self) -> Result<Self> {
        let depths = self.depths();
        let max = self
            .sample_leaf
            .iter()
            .map(|&v| depths[v])
            .fold(0.0f64, f64::max);
        if max <= 0.0 {
            return Err(Error::InvalidParameter("cannot normalise a tree with zero depth".into()));
        }
        for len in &mut self.edge_length {
            *len /= max;
        }
        let depths = self.depths();
        for &leaf in &self.sample_leaf {
            self.edge_length[leaf] += 1.0 - depths[leaf];
        }
        validate_tree(&self)?;
        Ok(self)
    }
}

/// Checks every tree invariant: structure, leaf mapping and unit depth.
pub fn validate_tree(tree: &RootedTree) -> Result<()> {
    let rebuilt = RootedTree::structure(tree.parent.clone(), tree.edge_length.clone(), tree.leaf_sample.clone())?;
    if tree.leaf_count() == 0 {
        return Err(Error::LeafMapping("tree has no leaves".into()));
    }
    let depths = rebuilt.depths();
    let mut leaves = Vec::new();
    let mut bad_depths = Vec::new();
    for (s, &v) in rebuilt.sample_leaf.iter().enumerate() {
        if (depths[v] - 1.0).abs() > DEPTH_TOLERANCE {
            leaves.push(s);
            bad_depths.push(depths[v]);
        }
    }
    if !leaves.is_empty() {
        return Err(Error::DepthViolation { leaves, depths: bad_depths });
    }
    Ok(())
}

/// Every sample hangs directly off the root with an edge of length one; the
/// tree-structured prior on it is exactly the exchangeable one.
pub fn flat_tree(n: usize) -> Result<RootedTree> {
    if n == 0 {
        return Err(Error::InvalidParameter("a tree needs at least one sample".into()));
    }
    let mut parent = vec![None];
    let mut len = vec![0.0];
    let mut leaf = vec![None];
    for s in 0..n {
        parent.push(Some(0));
        len.push(1.0);
        leaf.push(Some(s));
    }
    RootedTree::from_parents(parent, len, leaf)
}

/// Root → one node per distinct group (edge `eta`) → member samples (edge `1 − eta`).
pub fn group_tree(labels: &[usize], eta: f64) -> Result<RootedTree> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!("eta must lie in [0, 1), got {eta}")));
    }
    if labels.is_empty() {
        return Err(Error::InvalidParameter("a tree needs at least one sample".into()));
    }
    let mut groups: Vec<usize> = labels.to_vec();
    groups.sort_unstable();
    groups.dedup();
    let mut parent = vec![None];
    let mut len = vec![0.0];
    let mut leaf = vec![None];
    let mut group_node = std::collections::HashMap::new();
    for &g in &groups {
        group_node.insert(g, parent.len());
        parent.push(Some(0));
        len.push(eta);
        leaf.push(None);
    }
    for (s, g) in labels.iter().enumerate() {
        parent.push(Some(group_node[g]));
        len.push(1.0 - eta);
        leaf.push(Some(s));
    }
    RootedTree::from_parents(parent, len, leaf)
}

pub fn two_group_tree(n: usize, eta: f64, partition: &GroupPartition) -> Result<RootedTree> {
    if partition.n() != n {
        return Err(Error::DimensionMismatch(format!("partition covers {} samples, n = {n}", partition.n())));
    }
    group_tree(&partition.labels(), eta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_tree_is_valid() {
        let t = flat_tree(5).unwrap();
        assert_eq!(t.leaf_count(), 5);
        validate_tree(&t).unwrap();
        let one = flat_tree(1).unwrap();
        assert_eq!(one.depths()[one.leaf_of_sample(0)], 1.0);
    }

    #[test]
    fn two_group_tree_edges() {
        let part = GroupPartition::halves(6);
        for eta in [0.0, 0.5, 0.8] {
            let t = two_group_tree(6, eta, &part).unwrap();
            validate_tree(&t).unwrap();
            let leaf = t.leaf_of_sample(0);
            let g = t.parent(leaf).unwrap();
            assert_eq!(t.edge_length(g), eta);
            assert!((t.edge_length(leaf) - (1.0 - eta)).abs() < 1e-15);
        }
        assert!(two_group_tree(6, 1.0, &part).is_err());
        assert!(two_group_tree(5, 0.5, &part).is_err());
    }

    #[test]
    fn shallow_leaf_is_a_depth_violation() {
        let err = RootedTree::from_parents(
            vec![None, Some(0), Some(0)],
            vec![0.0, 1.0, 0.9],
            vec![None, Some(0), Some(1)],
        )
        .unwrap_err();
        match err {
            Error::DepthViolation { leaves, .. } => assert_eq!(leaves, vec![1]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cycles_and_bad_maps_are_rejected() {
        let cyc = RootedTree::from_parents(
            vec![None, Some(2), Some(1)],
            vec![0.0, 0.5, 0.5],
            vec![None, None, None],
        );
        assert!(matches!(cyc, Err(Error::Cycle(_))));
        let unmapped = RootedTree::from_parents(vec![None, Some(0)], vec![0.0, 1.0], vec![None, None]);
        assert!(matches!(unmapped, Err(Error::LeafMapping(_))));
        let dup = RootedTree::from_parents(
            vec![None, Some(0), Some(0)],
            vec![0.0, 1.0, 1.0],
            vec![None, Some(0), Some(0)],
        );
        assert!(matches!(dup, Err(Error::LeafMapping(_))));
    }

    #[test]
    fn normalisation_stretches_to_unit_depth() {
        let t = RootedTree::structure(
            vec![None, Some(0), Some(1), Some(1), Some(0)],
            vec![0.0, 1.0, 1.0, 0.5, 0.7],
            vec![None, None, Some(0), Some(1), Some(2)],
        )
        .unwrap();
        let t = t.normalize_depth().unwrap();
        validate_tree(&t).unwrap();
        assert!((t.edge_length(1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn shared_depth_in_group_tree() {
        let t = group_tree(&[0, 0, 1, 1], 0.8).unwrap();
        assert!((t.shared_depth(0, 1) - 0.8).abs() < 1e-12);
        assert_eq!(t.shared_depth(0, 2), 0.0);
        assert!((t.shared_depth(3, 3) - 1.0).abs() < 1e-12);
    }
}
