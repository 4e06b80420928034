//! Generate a motif dataset, split it by unseen base families, and write it
//! as JSON lines.
//!
//! cargo run --release --example generate_dataset -- [out.jsonl]

use open_xgnn::datagen::{generate, split, GenConfig, SplitConfig};
use open_xgnn::graph::{write_jsonl, ShiftDomain, ShiftKind, SplitTag};

fn main() -> open_xgnn::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "dataset.jsonl".into());
    let ds = generate(&GenConfig::default())?;
    let ds = split(&ds, ShiftKind::Covariate, ShiftDomain::Basis, &SplitConfig::default())?;
    for tag in [SplitTag::Train, SplitTag::IdTest, SplitTag::Val, SplitTag::Test] {
        let graphs = ds.subset(tag);
        let nodes: usize = graphs.iter().map(|g| g.node_count()).sum();
        println!("{tag:?}: {} graphs, {:.1} nodes on average", graphs.len(), nodes as f64 / graphs.len().max(1) as f64);
    }
    write_jsonl(&ds, std::path::Path::new(&out))?;
    println!("wrote {out}");
    Ok(())
}
