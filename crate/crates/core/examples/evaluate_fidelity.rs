//! Run the whole pipeline in a temporary run directory and compare the
//! explainer with the random and top-degree baselines.
//!
//! cargo run --release --example evaluate_fidelity -- [seed]

use open_xgnn::config::RunConfig;
use open_xgnn::pipeline::run_all;

fn main() -> open_xgnn::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let dir = std::env::temp_dir().join(format!("open-xgnn-example-{seed}"));
    let reports = run_all(&RunConfig::default().with_seed(seed), &dir)?;
    println!("{:<11} {:>7} {:>7} {:>7} {:>7} {:>9}", "method", "fid+", "fid-", "gef", "rho_e", "gt recall");
    for r in &reports {
        println!(
            "{:<11} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>9.3}",
            r.method, r.fid_plus, r.fid_minus, r.gef, r.rho_e, r.gt_recall
        );
    }
    println!("artifacts in {}", dir.display());
    Ok(())
}
