//! Finite-difference check of every loss term on a three-graph batch.
//!
//! cargo run --release --example gradient_check

use open_xgnn::datagen::{generate, GenConfig};
use open_xgnn::graph::Graph;
use open_xgnn::gvag::train::{LossProbe, Term};
use open_xgnn::gvag::{Arch, ExplainerConfig};
use open_xgnn::npaf::{fit_npaf, NpafConfig};
use open_xgnn::target::{train_target, TargetConfig};
use open_xgnn::tensor::grad_check;

fn main() -> open_xgnn::Result<()> {
    let ds = generate(&GenConfig {
        num_graphs: 3,
        ..GenConfig::default()
    })?;
    let graphs: Vec<&Graph> = ds.graphs.iter().collect();
    let (model, _) = train_target(&graphs, 3, &TargetConfig { epochs: 2, ..TargetConfig::default() })?;
    let env = fit_npaf(&graphs, &NpafConfig { k: 2, ..NpafConfig::default() })?;
    let cfg = ExplainerConfig {
        arch: Arch { env_dim: 4, latent: 4, hidden: 8 },
        ..ExplainerConfig::default()
    };
    let probe = LossProbe::new(&graphs, &model, &env, &cfg)?;
    for term in Term::ALL {
        let r = grad_check(|t, p| probe.term(t, p, term), probe.params(), 1e-5, 300, 0)?;
        println!("{:<10} max relative error {:.2e} over {} entries", term.name(), r.max_rel_error, r.checked);
    }
    Ok(())
}
