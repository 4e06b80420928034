//! Subgraph reconstruction from node and edge existence probabilities.
//!
//! [`sample_subgraph_train`] is the stochastic sampler used during training;
//! [`reconstruct_edge_first`] is the deterministic top-k procedure used at
//! evaluation time. Probabilities are combined in log space throughout.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Explanation, Graph};

/// Probabilities are kept inside `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-6;

/// Per-node and per-edge existence probabilities for one graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbMap {
    pub node_prob: Vec<f64>,
    pub edge_prob: Vec<f64>,
}

impl ProbMap {
    pub fn uniform(g: &Graph, p: f64) -> Self {
        Self {
            node_prob: vec![p; g.node_count()],
            edge_prob: vec![p; g.edge_count()],
        }
    }

    fn check(&self, g: &Graph) -> Result<()> {
        if self.node_prob.len() != g.node_count() || self.edge_prob.len() != g.edge_count() {
            return Err(Error::structural(format!(
                "probability map sized ({}, {}) for graph ({}, {})",
                self.node_prob.len(),
                self.edge_prob.len(),
                g.node_count(),
                g.edge_count()
            )));
        }
        Ok(())
    }
}

fn shift(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `Σ ln p_v` over selected nodes plus `Σ ln p_e` over selected edges.
pub fn graph_log_prob(pm: &ProbMap, e: &Explanation) -> f64 {
    let nodes: f64 = pm
        .node_prob
        .iter()
        .zip(&e.node_mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| p.ln())
        .sum();
    let edges: f64 = pm
        .edge_prob
        .iter()
        .zip(&e.edge_mask)
        .filter(|(_, &m)| m)
        .map(|(p, _)| p.ln())
        .sum();
    nodes + edges
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    /// Fixed node budget; `None` derives it from the prior bounds.
    pub max_nodes: Option<usize>,
    pub start_nid: Option<usize>,
    pub density: f64,
    pub max_iter: usize,
    pub min_edges: usize,
    pub prior_ratio: f64,
    pub prior_min_nodes: usize,
    pub prior_max_nodes: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            max_nodes: None,
            start_nid: None,
            density: 0.1,
            max_iter: 20,
            min_edges: 4,
            prior_ratio: 0.3,
            prior_min_nodes: 5,
            prior_max_nodes: 7,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::config("recon.density", "must lie in (0, 1]"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("recon.max_iter", "must be at least 1"));
        }
        if self.min_edges == 0 {
            return Err(Error::config("recon.min_edges", "must be at least 1"));
        }
        if self.prior_min_nodes == 0 || self.prior_min_nodes > self.prior_max_nodes {
            return Err(Error::config(
                "recon.prior_min_nodes",
                "need 1 <= prior_min_nodes <= prior_max_nodes",
            ));
        }
        if !(self.prior_ratio > 0.0 && self.prior_ratio <= 1.0) {
            return Err(Error::config("recon.prior_ratio", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// `clamp(round(prior_ratio · n), prior_min_nodes, prior_max_nodes)`.
    pub fn prior_nodes(&self, n: usize) -> usize {
        ((self.prior_ratio * n as f64).round() as usize).clamp(self.prior_min_nodes, self.prior_max_nodes)
    }

    pub fn node_budget(&self, n: usize) -> usize {
        self.max_nodes.unwrap_or_else(|| self.prior_nodes(n)).min(n)
    }
}

/// Stochastic subgraph sampler.
///
/// Nodes are drawn as independent Bernoulli trials per iteration until the
/// budget is met, then topped up by highest probability or pruned by lowest
/// (ties to the lower index; `start_nid` is never pruned). Edges are drawn
/// among selected endpoints with probability `p_e · 1 · 1` until the edge
/// density reaches `density` and at least `min_edges` are chosen (or no
/// candidate remains). Nodes left without an edge are dropped.
pub fn sample_subgraph_train(pm: &ProbMap, g: &Graph, cfg: &ReconConfig, rng: &mut impl Rng) -> Result<Explanation> {
    pm.check(g)?;
    let n = g.node_count();
    let m = g.edge_count();
    if let Some(s) = cfg.start_nid {
        if s >= n {
            return Err(Error::structural(format!("start node {s} out of range for {n} nodes")));
        }
    }
    if n == 0 {
        return Ok(Explanation::empty(g));
    }
    let budget = cfg.node_budget(n);
    let node_p: Vec<f64> = pm.node_prob.iter().map(|&p| shift(p)).collect();
    let edge_p: Vec<f64> = pm.edge_prob.iter().map(|&p| shift(p)).collect();

    let mut selected = vec![false; n];
    let mut count = 0;
    if let Some(s) = cfg.start_nid {
        selected[s] = true;
        count = 1;
    }
    for _ in 0..cfg.max_iter {
        if count >= budget {
            break;
        }
        for i in 0..n {
            if !selected[i] && rng.random::<f64>() < node_p[i] {
                selected[i] = true;
                count += 1;
            }
        }
    }
    if count < budget {
        let mut rest: Vec<usize> = (0..n).filter(|&i| !selected[i]).collect();
        rest.sort_by(|&a, &b| node_p[b].total_cmp(&node_p[a]).then(a.cmp(&b)));
        for &i in rest.iter().take(budget - count) {
            selected[i] = true;
        }
    } else if count > budget {
        let mut chosen: Vec<usize> = (0..n).filter(|&i| selected[i] && Some(i) != cfg.start_nid).collect();
        chosen.sort_by(|&a, &b| node_p[a].total_cmp(&node_p[b]).then(a.cmp(&b)));
        for &i in chosen.iter().take(count - budget) {
            selected[i] = false;
        }
    }

    let candidates: Vec<usize> = (0..m)
        .filter(|&k| {
            let (a, b) = g.edges()[k];
            selected[a] && selected[b]
        })
        .collect();
    let mut edge_mask = vec![false; m];
    let mut taken = 0usize;
    let enough = |taken: usize| taken as f64 >= cfg.density * m as f64 && taken >= cfg.min_edges.min(candidates.len());
    for _ in 0..cfg.max_iter {
        if enough(taken) || taken == candidates.len() {
            break;
        }
        for &k in &candidates {
            if !edge_mask[k] && rng.random::<f64>() < edge_p[k] {
                edge_mask[k] = true;
                taken += 1;
            }
        }
    }
    let mut e = Explanation::from_edges(g, edge_mask, 0.0)?;
    e.log_prob = graph_log_prob(
        &ProbMap {
            node_prob: node_p,
            edge_prob: edge_p,
        },
        &e,
    );
    Ok(e)
}

/// Number of edges chosen by [`reconstruct_edge_first`] on `m` edges.
pub fn edge_first_count(m: usize, density: f64, min_edges: usize) -> usize {
    ((density * m as f64).ceil() as usize).max(min_edges).min(m)
}

/// Deterministic top-k edges by `p_e · p_src · p_dst` (ties to the lower
/// edge index) and their endpoints.
pub fn reconstruct_edge_first(pm: &ProbMap, g: &Graph, cfg: &ReconConfig) -> Result<Explanation> {
    pm.check(g)?;
    let m = g.edge_count();
    if m == 0 {
        return Ok(Explanation::empty(g));
    }
    let score: Vec<f64> = g
        .edges()
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| pm.edge_prob[k] * pm.node_prob[a] * pm.node_prob[b])
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    let k = edge_first_count(m, cfg.density, cfg.min_edges);
    let mut mask = vec![false; m];
    let mut log_prob = 0.0;
    for &e in &order[..k] {
        mask[e] = true;
        log_prob += score[e].ln();
    }
    Explanation::from_edges(g, mask, log_prob.min(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub n: usize,
    pub max_iter: usize,
    pub seconds: f64,
}

/// Random connected graph with about `2n` edges and features of width 1.
pub fn probe_graph(n: usize, rng: &mut impl Rng) -> Result<Graph> {
    let mut edges = std::collections::BTreeSet::new();
    for v in 1..n {
        edges.insert((rng.random_range(0..v), v));
    }
    for _ in 0..n {
        let a = rng.random_range(0..n.max(1));
        let b = rng.random_range(0..n.max(1));
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    Graph::new(n, edges.into_iter().collect(), ndarray::Array2::zeros((n, 1)), vec![0; n], 0)
}

/// Times the training sampler on random graphs of each size.
///
/// Node probabilities are `1/n` with a budget of `n/2`, and edge
/// probabilities are small with target density 1, so both sampling loops
/// run their full `max_iter` iterations. Each size reports the fastest of
/// `repeats` runs; runs for different sizes are interleaved.
pub fn runtime_probe(sizes: &[usize], max_iter: usize, repeats: usize, seed: u64) -> Result<Vec<ProbeRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for &n in sizes {
        let g = probe_graph(n, &mut rng)?;
        let pm = ProbMap {
            node_prob: vec![1.0 / n.max(1) as f64; n],
            edge_prob: vec![1e-3; g.edge_count()],
        };
        let cfg = ReconConfig {
            max_nodes: Some(n / 2),
            density: 1.0,
            max_iter,
            ..ReconConfig::default()
        };
        cases.push((g, pm, cfg));
    }
    let mut best = vec![f64::INFINITY; sizes.len()];
    for _ in 0..repeats.max(1) {
        for (i, (g, pm, cfg)) in cases.iter().enumerate() {
            let start = Instant::now();
            let e = sample_subgraph_train(pm, g, cfg, &mut rng)?;
            std::hint::black_box(&e);
            best[i] = best[i].min(start.elapsed().as_secs_f64());
        }
    }
    Ok(sizes
        .iter()
        .zip(best)
        .map(|(&n, seconds)| ProbeRow { n, max_iter, seconds })
        .collect())
}

pub fn write_probe_csv(rows: &[ProbeRow], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
