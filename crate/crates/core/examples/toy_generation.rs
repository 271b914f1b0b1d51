//! Greedy generation with a full cache and with a spectrally compressed
//! cache, side by side.
//!
//! ```text
//! cargo run --release --example toy_generation
//! ```

use faedkv::corpus::synthetic_corpus;
use faedkv::{
    CacheGeometry, CacheMode, CompressionConfig, ModelConfig, NormalizationMode, PruneMask, Result,
    ToyModel,
};

fn main() -> Result<()> {
    let config = ModelConfig::default();
    let model = ToyModel::random(config, 1)?;
    let prompt = synthetic_corpus(config.vocab, 1, 256, 2).remove(0);
    let geometry = CacheGeometry::new(10, 50);

    let full = model.generate(&prompt, 16, &CacheMode::Full)?;
    println!("full      {:?}", full.tokens);

    for kept in [(0..22).collect::<Vec<_>>(), vec![0, 1, 10, 11, 20, 21]] {
        let ratio = kept.len() as f64 / 22.0;
        let mask = PruneMask::new(22, ratio, vec![kept; config.layers])?;
        let mode = CacheMode::Compressed(CompressionConfig {
            mask,
            geometry,
            mode: NormalizationMode::PaperApprox,
        });
        let run = model.generate(&prompt, 16, &mode)?;
        let same = run
            .tokens
            .iter()
            .zip(&full.tokens)
            .filter(|(a, b)| a == b)
            .count();
        println!("r={ratio:.2}    {:?} ({same}/16 match)", run.tokens);
    }

    let ppl = model.perplexity(&CacheMode::Full, &prompt)?;
    println!("prompt perplexity with a full cache: {ppl:.3}");
    Ok(())
}
