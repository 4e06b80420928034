//! Infer structure and feature environments without parameters and compare
//! them with the planted ones.
//!
//! cargo run --release --example npaf_environments

use open_xgnn::datagen::{generate, GenConfig};
use open_xgnn::graph::Graph;
use open_xgnn::npaf::{fit_npaf, NpafConfig};
use open_xgnn::stats::adjusted_rand_index;

fn main() -> open_xgnn::Result<()> {
    let ds = generate(&GenConfig {
        num_graphs: 600,
        ..GenConfig::default()
    })?;
    let graphs: Vec<&Graph> = ds.graphs.iter().collect();
    let env = fit_npaf(&graphs, &NpafConfig::default())?;
    let family: Vec<usize> = graphs.iter().map(|g| g.env_meta().map_or(0, |m| m.family as usize)).collect();
    let planted: Vec<usize> = graphs.iter().map(|g| g.env_meta().map_or(0, |m| m.env_id)).collect();
    println!("structure ARI vs base family {:.3}", adjusted_rand_index(&env.structure_labels, &family));
    println!("feature ARI vs planted env   {:.3}", adjusted_rand_index(&env.feature_labels, &planted));
    println!("environment dims {:?} (planted {:?})", env.dim_env, GenConfig::default().env_dims);
    let causal: usize = env.partitions.iter().map(|p| p.nodes.iter().filter(|&&c| c).count()).sum();
    let total: usize = graphs.iter().map(|g| g.node_count()).sum();
    println!("causal nodes {causal} of {total}");
    Ok(())
}
