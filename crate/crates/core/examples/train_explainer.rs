//! Train the explanation generator against a frozen classifier and explain
//! a few held-out graphs.
//!
//! cargo run --release --example train_explainer

use open_xgnn::datagen::{generate, split, GenConfig, SplitConfig};
use open_xgnn::graph::{render_dot, ShiftDomain, ShiftKind, SplitTag};
use open_xgnn::gvag::{train_explainer, ExplainerConfig};
use open_xgnn::npaf::{fit_npaf, NpafConfig};
use open_xgnn::target::{train_target, TargetConfig};

fn main() -> open_xgnn::Result<()> {
    let ds = split(&generate(&GenConfig::default())?, ShiftKind::Covariate, ShiftDomain::Basis, &SplitConfig::default())?;
    let train = ds.subset(SplitTag::Train);
    let (model, _) = train_target(&train, 3, &TargetConfig::default())?;
    let env = fit_npaf(&train, &NpafConfig::default())?;
    let out = train_explainer(&train, &model, &env, &model.fingerprint(), &ExplainerConfig::default())?;
    for row in &out.log {
        let l = &row.losses;
        println!("epoch {:>2}  nodevae {:.3}  mi {:.4}  con {:.3}  causal {:.3}", row.epoch, l.nodevae, l.mi, l.con, l.causal);
    }
    for g in ds.subset(SplitTag::Test).into_iter().take(2) {
        let e = out.explainer.explain(&model, g)?;
        println!("{}", render_dot(g, &e)?);
    }
    Ok(())
}
