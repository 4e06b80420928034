//! Time the sampling-based reconstruction as the graph size doubles.
//!
//! cargo run --release --example runtime_probe

use open_xgnn::recon::runtime_probe;

fn main() -> open_xgnn::Result<()> {
    let rows = runtime_probe(&[500, 1000, 2000, 4000, 8000], 20, 5, 0)?;
    let mut prev: Option<f64> = None;
    for r in &rows {
        let ratio = prev.map(|p| format!("{:.2}x", r.seconds / p)).unwrap_or_default();
        println!("n={:<5} {:>10.6}s {ratio}", r.n, r.seconds);
        prev = Some(r.seconds);
    }
    Ok(())
}
