//! Causal node and edge partitions from structure embeddings.

use serde::{Deserialize, Serialize};

use super::wl::{structure_features_from, wl_embed};
use crate::graph::Graph;
use crate::stats::{mean_std, median};
use crate::tensor::Matrix;

/// Edge scores above `mean + EDGE_STD_MULTIPLIER·std` are environment-critical.
pub const EDGE_STD_MULTIPLIER: f64 = 1.0;
const THRESHOLD_SLACK: f64 = 1e-9;

/// Node and edge masks; `true` marks the causal part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalPartition {
    pub nodes: Vec<bool>,
    pub edges: Vec<bool>,
}

/// Per-node scores for one group of graphs sharing `(E^s, Y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeScores {
    /// One vector per graph, aligned with its nodes.
    pub scores: Vec<Vec<f64>>,
    /// `true` for nodes scoring above the group median.
    pub causal: Vec<Vec<bool>>,
    /// Median score of the group.
    pub threshold: f64,
    /// Mean embedding row and row count, kept for scoring unseen graphs.
    pub mean: Vec<f64>,
    pub count: usize,
}

/// Sum over columns of the population variance of the pooled rows.
pub fn group_variance(rows: &[&Matrix]) -> f64 {
    let (mean, count) = pooled_mean(rows);
    if count == 0 {
        return 0.0;
    }
    let mut s = 0.0;
    for m in rows {
        for r in m.rows() {
            s += r.iter().zip(&mean).map(|(x, mu)| (x - mu) * (x - mu)).sum::<f64>();
        }
    }
    s / count as f64
}

fn pooled_mean(rows: &[&Matrix]) -> (Vec<f64>, usize) {
    let dim = rows.first().map_or(0, |m| m.ncols());
    let mut mean = vec![0.0; dim];
    let mut count = 0;
    for m in rows {
        for r in m.rows() {
            mean.iter_mut().zip(r.iter()).for_each(|(a, &x)| *a += x);
            count += 1;
        }
    }
    if count > 0 {
        mean.iter_mut().for_each(|a| *a /= count as f64);
    }
    (mean, count)
}

/// Norm of `∂S/∂h_i = 2(h_i − h̄)/N` for a row `h_i`.
pub fn gradient_norm(row: ndarray::ArrayView1<f64>, mean: &[f64], count: usize) -> f64 {
    let s: f64 = row.iter().zip(mean).map(|(x, m)| (x - m) * (x - m)).sum();
    2.0 * s.sqrt() / count as f64
}

/// Scores every node of a group by the gradient norm of the group variance.
/// A single-graph group scores all zeros and marks nothing causal.
pub fn causal_nodes(group: &[&Matrix]) -> NodeScores {
    let (mean, count) = pooled_mean(group);
    if group.len() <= 1 {
        return NodeScores {
            scores: group.iter().map(|m| vec![0.0; m.nrows()]).collect(),
            causal: group.iter().map(|m| vec![false; m.nrows()]).collect(),
            threshold: 0.0,
            mean,
            count,
        };
    }
    let scores: Vec<Vec<f64>> = group
        .iter()
        .map(|m| m.rows().into_iter().map(|r| gradient_norm(r, &mean, count)).collect())
        .collect();
    let all: Vec<f64> = scores.iter().flatten().copied().collect();
    let threshold = median(&all);
    let causal = scores
        .iter()
        .map(|s| s.iter().map(|&x| x > threshold + THRESHOLD_SLACK).collect())
        .collect();
    NodeScores {
        scores,
        causal,
        threshold,
        mean,
        count,
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance change to `center` caused by deleting each edge in turn.
pub fn edge_scores(g: &Graph, center: &[f64], iterations: usize) -> Vec<f64> {
    let mut degrees = g.degrees();
    let adj = g.adjacency();
    let base = wl_embed(&adj, &structure_features_from(&degrees, g.node_types()), iterations);
    let d0 = dist(&base.graph, center);
    let mut out = Vec::with_capacity(g.edge_count());
    for &(a, b) in g.edges() {
        degrees[a] -= 1;
        degrees[b] -= 1;
        let mut cut = adj.clone();
        cut[a].retain(|&x| x != b);
        cut[b].retain(|&x| x != a);
        let e = wl_embed(&cut, &structure_features_from(&degrees, g.node_types()), iterations);
        out.push((dist(&e.graph, center) - d0).abs());
        degrees[a] += 1;
        degrees[b] += 1;
    }
    out
}

/// Edge scores plus a causal mask: edges at or below `mean + std` are causal.
pub fn causal_edges(g: &Graph, center: &[f64], iterations: usize) -> (Vec<f64>, Vec<bool>) {
    let scores = edge_scores(g, center, iterations);
    let (m, s) = mean_std(&scores);
    let cut = m + EDGE_STD_MULTIPLIER * s + THRESHOLD_SLACK;
    let causal = scores.iter().map(|&x| x <= cut).collect();
    (scores, causal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::npaf::wl::embed_graph;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_rows_score_zero() {
        let a = Array2::from_elem((3, 2), 1.0);
        let b = Array2::from_elem((2, 2), 1.0);
        let s = causal_nodes(&[&a, &b]);
        assert!(s.scores.iter().flatten().all(|&x| x == 0.0));
        assert!(s.causal.iter().flatten().all(|&c| !c));
    }

    #[test]
    fn outlier_has_the_top_score() {
        let a = array![[0.0, 0.0], [0.0, 0.0], [5.0, 1.0]];
        let b = array![[0.0, 0.0], [0.0, 0.0]];
        let s = causal_nodes(&[&a, &b]);
        let top = s.scores[0][2];
        assert!(s.scores.iter().flatten().filter(|&&x| x != top).all(|&x| x < top));
        assert!(s.causal[0][2]);
    }

    #[test]
    fn singleton_group_convention() {
        let a = array![[0.0], [3.0]];
        let s = causal_nodes(&[&a]);
        assert_eq!(s.scores, vec![vec![0.0, 0.0]]);
        assert_eq!(s.causal, vec![vec![false, false]]);
    }

    #[test]
    fn analytic_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Array2::from_shape_fn((6, 3), |_| rng.random::<f64>());
        let b = Array2::from_shape_fn((4, 3), |_| rng.random::<f64>());
        let (mean, count) = pooled_mean(&[&a, &b]);
        let h = 1e-6;
        for i in 0..6 {
            let mut fd = Vec::new();
            for d in 0..3 {
                let mut plus = a.clone();
                plus[[i, d]] += h;
                let mut minus = a.clone();
                minus[[i, d]] -= h;
                fd.push((group_variance(&[&plus, &b]) - group_variance(&[&minus, &b])) / (2.0 * h));
            }
            let analytic: Vec<f64> = (0..3).map(|d| 2.0 * (a[[i, d]] - mean[d]) / count as f64).collect();
            for (x, y) in fd.iter().zip(&analytic) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-6);
            }
            let norm = analytic.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert_abs_diff_eq!(gradient_norm(a.row(i), &mean, count), norm, epsilon = 1e-12);
        }
    }

    #[test]
    fn cycle_edges_are_all_causal() {
        let g = Graph::new(6, (0..6).map(|i| (i, (i + 1) % 6)).collect(), Array2::zeros((6, 1)), vec![0; 6], 0).unwrap();
        let center = vec![0.3; embed_graph(&g, 3).graph.len()];
        let (scores, causal) = causal_edges(&g, &center, 3);
        assert!(scores.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
        assert!(causal.iter().all(|&c| c));
    }

    #[test]
    fn edgeless_graph() {
        let g = Graph::new(2, vec![], Array2::zeros((2, 1)), vec![0, 0], 0).unwrap();
        let (scores, causal) = causal_edges(&g, &[0.0; 28], 3);
        assert!(scores.is_empty() && causal.is_empty());
    }
}
