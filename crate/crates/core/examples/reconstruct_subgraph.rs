//! Sample training subgraphs and run deterministic edge-first
//! reconstruction on a hand-made probability map.
//!
//! cargo run --release --example reconstruct_subgraph

use open_xgnn::recon::{reconstruct_edge_first, sample_subgraph_train, ProbMap, ReconConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> open_xgnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = open_xgnn::recon::probe_graph(30, &mut rng)?;
    // favor low-index nodes and the edges between them
    let node_prob: Vec<f64> = (0..g.node_count()).map(|i| 0.9 - 0.025 * i as f64).collect();
    let edge_prob: Vec<f64> = g.edges().iter().map(|&(a, b)| (node_prob[a] * node_prob[b]).max(0.01)).collect();
    println!("host graph: {} nodes, {} edges", g.node_count(), g.edge_count());
    let pm = ProbMap { node_prob, edge_prob };
    let cfg = ReconConfig {
        density: 0.2,
        ..ReconConfig::default()
    };
    for _ in 0..3 {
        let e = sample_subgraph_train(&pm, &g, &cfg, &mut rng)?;
        println!("sampled: {} nodes, {} edges, log p {:.2}", e.selected_nodes(), e.selected_edges(), e.log_prob);
    }
    let e = reconstruct_edge_first(&pm, &g, &cfg)?;
    let chosen: Vec<(usize, usize)> = g.edges().iter().zip(&e.edge_mask).filter(|(_, &m)| m).map(|(&ab, _)| ab).collect();
    println!("edge-first: {chosen:?}");
    Ok(())
}
