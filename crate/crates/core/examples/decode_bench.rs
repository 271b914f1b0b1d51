//! Per-step decode latency of the compressed cache against plain attention
//! over the full cache.
//!
//! ```text
//! cargo run --release --example decode_bench
//! ```

use faedkv::ablation::retained_count;
use faedkv::harness::bench::{BenchSetup, Phase};
use faedkv::{CacheGeometry, Result};

fn main() -> Result<()> {
    let geometry = CacheGeometry::new(10, 50);
    println!(
        "{:>6} {:>5} {:>12} {:>12}",
        "ctx", "r", "step_us", "full_us"
    );
    for n in [1024, 2048, 4096] {
        for ratio in [0.1, 0.25] {
            let setup = BenchSetup::new(n, 128, 22, retained_count(ratio, 22), 10, geometry, 0)?;
            let (step, _) = setup.measure(Phase::DecodeStep, 5)?;
            let (full, _) = setup.measure(Phase::FullAttend, 5)?;
            println!(
                "{n:>6} {ratio:>5} {:>12.1} {:>12.1}",
                step / 1e3,
                full / 1e3
            );
        }
    }
    Ok(())
}
