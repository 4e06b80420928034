//! Structure features and continuous Weisfeiler-Lehman propagation.

use ndarray::{s, Array2, Axis};

use crate::graph::Graph;
use crate::tensor::Matrix;

pub const DEGREE_BUCKETS: usize = 5;
pub const NODE_TYPES: usize = 2;
pub const STRUCTURE_DIM: usize = DEGREE_BUCKETS + NODE_TYPES;

/// Per-node and pooled structure embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureEmbeddings {
    /// `n × STRUCTURE_DIM·(T+1)`.
    pub nodes: Matrix,
    /// Row mean of `nodes`; zeros for an empty graph.
    pub graph: Vec<f64>,
}

fn degree_bucket(deg: usize) -> usize {
    deg.clamp(1, DEGREE_BUCKETS) - 1
}

/// One-hot degree bucket (≤1, 2, 3, 4, ≥5) followed by one-hot node type.
/// Types beyond the last slot share it.
pub fn structure_features(g: &Graph) -> Matrix {
    structure_features_from(&g.degrees(), g.node_types())
}

pub(crate) fn structure_features_from(degrees: &[usize], types: &[usize]) -> Matrix {
    let mut x = Array2::zeros((degrees.len(), STRUCTURE_DIM));
    for (i, (&d, &t)) in degrees.iter().zip(types).enumerate() {
        x[[i, degree_bucket(d)]] = 1.0;
        x[[i, DEGREE_BUCKETS + t.min(NODE_TYPES - 1)]] = 1.0;
    }
    x
}

/// `h_t = (h_{t-1} + mean of neighbor h_{t-1}) / 2`, iterations concatenated.
/// Nodes without neighbors average with a zero vector.
pub fn wl_embed(adjacency: &[Vec<usize>], x: &Matrix, iterations: usize) -> StructureEmbeddings {
    let (n, d) = x.dim();
    let mut nodes = Array2::zeros((n, d * (iterations + 1)));
    nodes.slice_mut(s![.., 0..d]).assign(x);
    let mut h = x.clone();
    for t in 1..=iterations {
        let mut next = Array2::zeros((n, d));
        for (i, nbrs) in adjacency.iter().enumerate() {
            let mut row = next.row_mut(i);
            for &j in nbrs {
                row += &h.row(j);
            }
            if !nbrs.is_empty() {
                row /= nbrs.len() as f64;
            }
            row += &h.row(i);
            row *= 0.5;
        }
        nodes.slice_mut(s![.., t * d..(t + 1) * d]).assign(&next);
        h = next;
    }
    let graph = if n == 0 {
        vec![0.0; d * (iterations + 1)]
    } else {
        nodes.mean_axis(Axis(0)).expect("nonempty").to_vec()
    };
    StructureEmbeddings { nodes, graph }
}

/// Structure features followed by [`wl_embed`].
pub fn embed_graph(g: &Graph, iterations: usize) -> StructureEmbeddings {
    wl_embed(&g.adjacency(), &structure_features(g), iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn graph(n: usize, edges: Vec<(usize, usize)>, types: Vec<usize>) -> Graph {
        Graph::new(n, edges, Array2::zeros((n, 1)), types, 0).unwrap()
    }

    #[test]
    fn degree_buckets() {
        let star = graph(8, (1..8).map(|i| (0, i)).collect(), vec![0, 1, 0, 0, 0, 0, 0, 0]);
        let x = structure_features(&star);
        assert_eq!(x.row(0).to_vec(), vec![0., 0., 0., 0., 1., 1., 0.]);
        assert_eq!(x.row(1).to_vec(), vec![1., 0., 0., 0., 0., 0., 1.]);
        let tri = graph(3, vec![(0, 1), (1, 2), (0, 2)], vec![0; 3]);
        let x = structure_features(&tri);
        assert!(x.rows().into_iter().all(|r| r == x.row(0)));
        assert_eq!(x[[0, 1]], 1.0);
    }

    #[test]
    fn path_one_iteration_by_hand() {
        let adj = vec![vec![1], vec![0, 2], vec![1]];
        let x = array![[1.0], [0.0], [0.0]];
        let e = wl_embed(&adj, &x, 1);
        assert_eq!(e.nodes.column(1).to_vec(), vec![0.5, 0.25, 0.0]);
        assert_eq!(e.nodes.column(0).to_vec(), vec![1.0, 0.0, 0.0]);
        assert_eq!(e.graph, vec![1.0 / 3.0, 0.25]);
    }

    #[test]
    fn zero_iterations_is_identity() {
        let g = graph(4, vec![(0, 1), (1, 2), (2, 3)], vec![0, 0, 1, 1]);
        let x = structure_features(&g);
        assert_eq!(wl_embed(&g.adjacency(), &x, 0).nodes, x);
    }

    #[test]
    fn regular_graph_rows_identical() {
        let cycle = graph(6, (0..6).map(|i| (i, (i + 1) % 6)).collect(), vec![0; 6]);
        let e = embed_graph(&cycle, 3);
        assert!(e.nodes.rows().into_iter().all(|r| r == e.nodes.row(0)));
        assert_eq!(e.nodes.ncols(), STRUCTURE_DIM * 4);
    }

    #[test]
    fn empty_graph() {
        let e = embed_graph(&Graph::empty(1, 0), 3);
        assert_eq!(e.nodes.nrows(), 0);
        assert_eq!(e.graph, vec![0.0; STRUCTURE_DIM * 4]);
    }
}
