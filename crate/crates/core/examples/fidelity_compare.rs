//! Reconstruction error of the compressed middle segment for every head of a
//! toy model, checked against the inverse transform of the dropped bins.
//!
//! ```text
//! cargo run --release --example fidelity_compare
//! ```

use faedkv::harness::{compare, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for ratio in [1.0, 0.5, 0.25] {
        let cfg = RunConfig {
            ratio,
            prompt_len: 200,
            ..RunConfig::default()
        };
        let report = compare::compute(&cfg)?;
        println!(
            "r={ratio:<4} period {} max error {:.4} mean {:.4} oracle gap {:.1e}",
            report.period,
            report.summary.max_error,
            report.summary.mean_error,
            report.summary.max_oracle_discrepancy
        );
    }
    Ok(())
}
