//! Train the black-box classifier and report split accuracies.
//!
//! cargo run --release --example train_target

use open_xgnn::datagen::{generate, split, GenConfig, SplitConfig};
use open_xgnn::graph::{ShiftDomain, ShiftKind, SplitTag};
use open_xgnn::target::{train_target, TargetConfig};

fn main() -> open_xgnn::Result<()> {
    let ds = split(&generate(&GenConfig::default())?, ShiftKind::Covariate, ShiftDomain::Basis, &SplitConfig::default())?;
    let (model, log) = train_target(&ds.subset(SplitTag::Train), 3, &TargetConfig::default())?;
    for row in log.iter().step_by(5) {
        println!("epoch {:>2}  loss {:.4}  acc {:.3}", row.epoch, row.loss, row.accuracy);
    }
    for tag in [SplitTag::Train, SplitTag::IdTest, SplitTag::Test] {
        println!("{tag:?} accuracy {:.3}", model.accuracy(&ds.subset(tag))?);
    }
    println!("fingerprint {}", model.fingerprint());
    Ok(())
}
