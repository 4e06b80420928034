//! Graph data model shared by every other module.
//!
//! Graphs are undirected and store each edge once as `(src, dst)` with
//! `src < dst`. Consumers that need both directions (message passing,
//! structure embeddings) expand them internally.

mod dot;
mod jsonl;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dot::{export_dot, render_dot};
pub use jsonl::{read_jsonl, write_jsonl, SCHEMA_VERSION};

/// Base graph families the generator knows how to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseFamily {
    Path,
    Cycle,
    Tree,
    BarabasiAlbert,
    Wheel,
}

impl BaseFamily {
    pub const ALL: [BaseFamily; 5] = [
        BaseFamily::Tree,
        BaseFamily::Wheel,
        BaseFamily::Path,
        BaseFamily::Cycle,
        BaseFamily::BarabasiAlbert,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseFamily::Path => "path",
            BaseFamily::Cycle => "cycle",
            BaseFamily::Tree => "tree",
            BaseFamily::BarabasiAlbert => "barabasi_albert",
            BaseFamily::Wheel => "wheel",
        }
    }
}

/// Generator-side record of how a graph was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvMeta {
    pub family: BaseFamily,
    /// Index of `family` in the generating config; doubles as the planted
    /// environment id written into the environment feature dimensions.
    pub env_id: usize,
    pub base_size: usize,
    pub size_bucket: usize,
    pub env_dims: Vec<usize>,
}

/// Ground-truth explanation planted by the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub nodes: Vec<bool>,
    pub edges: Vec<bool>,
}

/// An undirected, attributed graph with a class label.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    features: Array2<f64>,
    node_types: Vec<usize>,
    label: usize,
    env_meta: Option<EnvMeta>,
    gt_motif: Option<GroundTruth>,
}

impl Graph {
    /// Builds a graph, normalizing edge orientation to `src < dst`.
    ///
    /// Fails on out-of-range endpoints, self-loops, duplicate edges,
    /// non-finite features, or a feature matrix without exactly one row
    /// per node.
    pub fn new(
        node_count: usize,
        edges: Vec<(usize, usize)>,
        features: Array2<f64>,
        node_types: Vec<usize>,
        label: usize,
    ) -> Result<Self> {
        if features.nrows() != node_count {
            return Err(Error::structural(format!(
                "feature matrix has {} rows for {} nodes",
                features.nrows(),
                node_count
            )));
        }
        if node_types.len() != node_count {
            return Err(Error::structural(format!(
                "{} node types for {} nodes",
                node_types.len(),
                node_count
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::structural("non-finite node feature"));
        }
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        let mut normalized = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::structural(format!(
                    "edge ({a}, {b}) out of range for {node_count} nodes"
                )));
            }
            if a == b {
                return Err(Error::structural(format!("self-loop on node {a}")));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(Error::structural(format!("duplicate edge {e:?}")));
            }
            normalized.push(e);
        }
        Ok(Self {
            node_count,
            edges: normalized,
            features,
            node_types,
            label,
            env_meta: None,
            gt_motif: None,
        })
    }

    pub fn empty(feature_dim: usize, label: usize) -> Self {
        Self {
            node_count: 0,
            edges: Vec::new(),
            features: Array2::zeros((0, feature_dim)),
            node_types: Vec::new(),
            label,
            env_meta: None,
            gt_motif: None,
        }
    }

    pub fn with_env_meta(mut self, meta: Option<EnvMeta>) -> Self {
        self.env_meta = meta;
        self
    }

    pub fn with_gt_motif(mut self, gt: Option<GroundTruth>) -> Result<Self> {
        if let Some(gt) = &gt {
            if gt.nodes.len() != self.node_count || gt.edges.len() != self.edges.len() {
                return Err(Error::structural(format!(
                    "ground-truth masks sized ({}, {}) for graph ({}, {})",
                    gt.nodes.len(),
                    gt.edges.len(),
                    self.node_count,
                    self.edges.len()
                )));
            }
        }
        self.gt_motif = gt;
        Ok(self)
    }

    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        if features.dim() != self.features.dim() {
            return Err(Error::structural("replacement features change shape"));
        }
        let mut g = self.clone();
        g.features = features;
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn node_types(&self) -> &[usize] {
        &self.node_types
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn env_meta(&self) -> Option<&EnvMeta> {
        self.env_meta.as_ref()
    }

    pub fn gt_motif(&self) -> Option<&GroundTruth> {
        self.gt_motif.as_ref()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Neighbor lists over both edge directions, sorted ascending.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Copy of the graph with one edge removed.
    pub fn without_edge(&self, edge: usize) -> Graph {
        let mut g = self.clone();
        g.edges.remove(edge);
        if let Some(gt) = &mut g.gt_motif {
            gt.edges.remove(edge);
        }
        g
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.node_count;
        let mut check = vec![false; n];
        if perm.len() != n {
            return Err(Error::structural("permutation length mismatch"));
        }
        for &p in perm {
            if p >= n || check[p] {
                return Err(Error::structural("not a permutation"));
            }
            check[p] = true;
        }
        let mut features = Array2::zeros(self.features.dim());
        let mut types = vec![0; n];
        for i in 0..n {
            features.row_mut(perm[i]).assign(&self.features.row(i));
            types[perm[i]] = self.node_types[i];
        }
        let edges = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        let g = Graph::new(n, edges, features, types, self.label)?;
        let gt = self.gt_motif.as_ref().map(|gt| {
            let mut nodes = vec![false; n];
            for i in 0..n {
                nodes[perm[i]] = gt.nodes[i];
            }
            GroundTruth {
                nodes,
                edges: gt.edges.clone(),
            }
        });
        g.with_env_meta(self.env_meta.clone()).with_gt_motif(gt)
    }
}

/// An explanation subgraph `G_c` expressed as masks over a host graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub node_mask: Vec<bool>,
    pub edge_mask: Vec<bool>,
    /// Natural log of the subgraph probability.
    pub log_prob: f64,
}

impl Explanation {
    /// Validated constructor: masks sized to `g`, every selected edge has
    /// both endpoints selected, and `log_prob <= 0`.
    pub fn new(g: &Graph, node_mask: Vec<bool>, edge_mask: Vec<bool>, log_prob: f64) -> Result<Self> {
        let e = Self {
            node_mask,
            edge_mask,
            log_prob,
        };
        e.validate(g)?;
        Ok(e)
    }

    /// Selects the given edges and exactly their endpoints.
    pub fn from_edges(g: &Graph, edge_mask: Vec<bool>, log_prob: f64) -> Result<Self> {
        if edge_mask.len() != g.edge_count() {
            return Err(Error::structural("edge mask length mismatch"));
        }
        let mut node_mask = vec![false; g.node_count()];
        for (k, &(a, b)) in g.edges().iter().enumerate() {
            if edge_mask[k] {
                node_mask[a] = true;
                node_mask[b] = true;
            }
        }
        Self::new(g, node_mask, edge_mask, log_prob)
    }

    pub fn full(g: &Graph) -> Self {
        Self {
            node_mask: vec![true; g.node_count()],
            edge_mask: vec![true; g.edge_count()],
            log_prob: 0.0,
        }
    }

    pub fn empty(g: &Graph) -> Self {
        Self {
            node_mask: vec![false; g.node_count()],
            edge_mask: vec![false; g.edge_count()],
            log_prob: 0.0,
        }
    }

    pub fn validate(&self, g: &Graph) -> Result<()> {
        if self.node_mask.len() != g.node_count() || self.edge_mask.len() != g.edge_count() {
            return Err(Error::structural(format!(
                "masks sized ({}, {}) for graph ({}, {})",
                self.node_mask.len(),
                self.edge_mask.len(),
                g.node_count(),
                g.edge_count()
            )));
        }
        for (k, &(a, b)) in g.edges().iter().enumerate() {
            if self.edge_mask[k] && !(self.node_mask[a] && self.node_mask[b]) {
                return Err(Error::structural(format!(
                    "edge {k} selected without both endpoints"
                )));
            }
        }
        if self.log_prob.is_nan() || self.log_prob > 0.0 {
            return Err(Error::structural(format!(
                "log_prob {} is not a log-probability",
                self.log_prob
            )));
        }
        Ok(())
    }

    pub fn selected_nodes(&self) -> usize {
        self.node_mask.iter().filter(|&&b| b).count()
    }

    pub fn selected_edges(&self) -> usize {
        self.edge_mask.iter().filter(|&&b| b).count()
    }
}

/// Subgraph `G_c` induced by the explanation masks, with nodes reindexed in
/// ascending original order.
pub fn induced_subgraph(g: &Graph, e: &Explanation) -> Result<Graph> {
    e.validate(g)?;
    let keep: Vec<usize> = (0..g.node_count()).filter(|&i| e.node_mask[i]).collect();
    build_restricted(g, &keep, |k| e.edge_mask[k])
}

/// Complement `G_s`: the explained edges are removed, and so are nodes that
/// belong only to `G_c` (selected nodes with no remaining incident edge).
/// Nodes outside the explanation, and selected nodes still touching a
/// remaining edge, are kept.
pub fn complement_graph(g: &Graph, e: &Explanation) -> Result<Graph> {
    e.validate(g)?;
    let mut touches_rest = vec![false; g.node_count()];
    for (k, &(a, b)) in g.edges().iter().enumerate() {
        if !e.edge_mask[k] {
            touches_rest[a] = true;
            touches_rest[b] = true;
        }
    }
    let keep: Vec<usize> = (0..g.node_count())
        .filter(|&i| !e.node_mask[i] || touches_rest[i])
        .collect();
    build_restricted(g, &keep, |k| !e.edge_mask[k])
}

fn build_restricted(g: &Graph, keep: &[usize], edge_kept: impl Fn(usize) -> bool) -> Result<Graph> {
    let mut index = vec![usize::MAX; g.node_count()];
    for (new, &old) in keep.iter().enumerate() {
        index[old] = new;
    }
    let mut features = Array2::zeros((keep.len(), g.feature_dim()));
    for (new, &old) in keep.iter().enumerate() {
        features.row_mut(new).assign(&g.features().row(old));
    }
    let types = keep.iter().map(|&i| g.node_types()[i]).collect();
    let mut edges = Vec::new();
    let mut kept_edges = Vec::new();
    for (k, &(a, b)) in g.edges().iter().enumerate() {
        if edge_kept(k) {
            debug_assert!(index[a] != usize::MAX && index[b] != usize::MAX);
            edges.push((index[a], index[b]));
            kept_edges.push(k);
        }
    }
    let sub = Graph::new(keep.len(), edges, features, types, g.label())?;
    let gt = g.gt_motif().map(|gt| GroundTruth {
        nodes: keep.iter().map(|&i| gt.nodes[i]).collect(),
        edges: kept_edges.iter().map(|&k| gt.edges[k]).collect(),
    });
    sub.with_env_meta(g.env_meta().cloned()).with_gt_motif(gt)
}

/// Partition tag assigned by a dataset split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    /// Held out from the training domains (in-distribution test).
    IdTest,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    Covariate,
    Concept,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftDomain {
    Basis,
    Size,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftDescriptor {
    pub kind: ShiftKind,
    pub domain: ShiftDomain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitAssignment {
    pub tags: Vec<SplitTag>,
    pub shift: ShiftDescriptor,
}

/// A collection of graphs, optionally partitioned into splits.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub graphs: Vec<Graph>,
    pub split: Option<SplitAssignment>,
}

impl Dataset {
    pub fn new(graphs: Vec<Graph>) -> Self {
        Self {
            graphs,
            split: None,
        }
    }

    pub fn with_split(graphs: Vec<Graph>, split: SplitAssignment) -> Result<Self> {
        if split.tags.len() != graphs.len() {
            return Err(Error::structural(format!(
                "{} split tags for {} graphs",
                split.tags.len(),
                graphs.len()
            )));
        }
        if !split.tags.contains(&SplitTag::Train) {
            return Err(Error::structural("split has an empty train partition"));
        }
        Ok(Self {
            graphs,
            split: Some(split),
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Indices of graphs carrying `tag`; empty when the dataset is unsplit.
    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        match &self.split {
            Some(s) => (0..self.graphs.len()).filter(|&i| s.tags[i] == tag).collect(),
            None => Vec::new(),
        }
    }

    pub fn subset(&self, tag: SplitTag) -> Vec<&Graph> {
        self.indices(tag).into_iter().map(|i| &self.graphs[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn plain(n: usize, edges: &[(usize, usize)]) -> Graph {
        let x = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        Graph::new(n, edges.to_vec(), x, vec![0; n], 0).unwrap()
    }

    #[test]
    fn rejects_bad_edges() {
        let x = Array2::zeros((3, 1));
        assert!(Graph::new(3, vec![(0, 3)], x.clone(), vec![0; 3], 0).is_err());
        assert!(Graph::new(3, vec![(1, 1)], x.clone(), vec![0; 3], 0).is_err());
        assert!(Graph::new(3, vec![(0, 1), (1, 0)], x.clone(), vec![0; 3], 0).is_err());
        assert!(Graph::new(2, vec![], x, vec![0; 2], 0).is_err());
        let g = Graph::new(3, vec![(2, 0)], Array2::zeros((3, 1)), vec![0; 3], 0).unwrap();
        assert_eq!(g.edges(), &[(0, 2)]);
    }

    #[test]
    fn explanation_requires_endpoint_closure() {
        let g = plain(3, &[(0, 1), (1, 2)]);
        assert!(Explanation::new(&g, vec![true, true, false], vec![true, true], 0.0).is_err());
        assert!(Explanation::new(&g, vec![true, true, false], vec![true, false], 0.1).is_err());
        assert!(Explanation::new(&g, vec![true, true], vec![true, false], 0.0).is_err());
        assert!(Explanation::new(&g, vec![true, true, false], vec![true, false], -1.0).is_ok());
    }

    #[test]
    fn induced_identity_and_empty() {
        let g = plain(4, &[(0, 1), (1, 2), (2, 3)]);
        let full = induced_subgraph(&g, &Explanation::full(&g)).unwrap();
        assert_eq!(full, g);
        let none = induced_subgraph(&g, &Explanation::empty(&g)).unwrap();
        assert_eq!(none.node_count(), 0);
        assert_eq!(none.edge_count(), 0);
    }

    #[test]
    fn induced_triangle_minus_one_edge_is_a_path() {
        let g = plain(3, &[(0, 1), (1, 2), (0, 2)]);
        let e = Explanation::new(&g, vec![true; 3], vec![true, true, false], 0.0).unwrap();
        let sub = induced_subgraph(&g, &e).unwrap();
        assert_eq!(sub.node_count(), 3);
        assert_eq!(sub.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(sub.features(), g.features());
    }

    #[test]
    fn induced_reindexes_and_copies_rows() {
        let mut types = vec![0, 1, 2, 3];
        types[3] = 7;
        let x = Array2::from_shape_fn((4, 2), |(i, j)| (10 * i + j) as f64);
        let g = Graph::new(4, vec![(0, 1), (1, 3), (2, 3)], x, types, 1).unwrap();
        let e = Explanation::new(&g, vec![false, true, false, true], vec![false, true, false], -0.5).unwrap();
        let sub = induced_subgraph(&g, &e).unwrap();
        assert_eq!(sub.edges(), &[(0, 1)]);
        assert_eq!(sub.node_types(), &[1, 7]);
        assert_eq!(sub.features().row(1).to_vec(), vec![30.0, 31.0]);
        assert_eq!(sub.label(), 1);
    }

    #[test]
    fn complement_trivial_cases() {
        let g = plain(4, &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(complement_graph(&g, &Explanation::empty(&g)).unwrap(), g);
        let gs = complement_graph(&g, &Explanation::full(&g)).unwrap();
        assert_eq!((gs.node_count(), gs.edge_count()), (0, 0));
    }

    #[test]
    fn complement_of_two_adjacent_cycle_edges() {
        // 4-cycle 0-1-2-3-0 with (0,1) and (1,2) explained. Node 1 has no
        // remaining edge, so it belongs to G_c only and is dropped; nodes 0
        // and 2 are shared with the remainder.
        let g = plain(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]);
        let e = Explanation::from_edges(&g, vec![true, true, false, false], 0.0).unwrap();
        let gs = complement_graph(&g, &e).unwrap();
        assert_eq!(gs.edge_count(), 2);
        assert_eq!(gs.node_count(), 3);
        assert_eq!(gs.edges(), &[(1, 2), (0, 2)]);
    }

    #[test]
    fn complement_keeps_unselected_isolated_nodes() {
        let g = plain(3, &[(0, 1)]);
        let e = Explanation::full(&g);
        let gs = complement_graph(&g, &e).unwrap();
        assert_eq!(gs.node_count(), 0);
        let e = Explanation::new(&g, vec![true, true, false], vec![true], 0.0).unwrap();
        assert_eq!(complement_graph(&g, &e).unwrap().node_count(), 1);
    }

    #[test]
    fn permutation_roundtrip() {
        let g = plain(4, &[(0, 1), (1, 2), (2, 3)]);
        let p = g.permuted(&[2, 0, 3, 1]).unwrap();
        assert_eq!(p.features().row(2), g.features().row(0));
        assert!(p.edges().contains(&(0, 2)));
        assert!(g.permuted(&[0, 0, 1, 2]).is_err());
    }
}
