//! Needle retrieval across depths: compressed middle segment against a
//! cache that drops the middle entirely.
//!
//! ```text
//! cargo run --release --example needle_probe
//! ```

use faedkv::needle::{needle_sweep, NeedleSettings, NeedleStrategy};
use faedkv::{CacheGeometry, NormalizationMode, Result};

fn main() -> Result<()> {
    let settings = NeedleSettings {
        geometry: CacheGeometry::new(10, 50),
        head_dim: 64,
        reps: 20,
        seed: 0,
    };
    let lengths = [1024];
    let compressed = needle_sweep(
        &lengths,
        NeedleStrategy::Compressed {
            ratio: 0.5,
            chunks: 22,
            mode: NormalizationMode::PaperApprox,
        },
        &settings,
    )?;
    let truncated = needle_sweep(&lengths, NeedleStrategy::Truncated, &settings)?;

    println!("depth  compressed  truncated");
    for (c, t) in compressed.iter().zip(&truncated) {
        println!("{:<6} {:>10.2} {:>10.2}", c.depth, c.accuracy, t.accuracy);
    }
    Ok(())
}
