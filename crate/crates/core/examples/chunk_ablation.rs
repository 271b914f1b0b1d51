//! Per-layer chunk importance on a random toy model, then greedy masks at
//! several retention ratios.
//!
//! ```text
//! cargo run --release --example chunk_ablation
//! ```

use faedkv::corpus::synthetic_corpus;
use faedkv::{greedy_select, run_ablation, CacheGeometry, ModelConfig, Result, ToyModel};

fn main() -> Result<()> {
    let config = ModelConfig::default();
    let model = ToyModel::random(config, 7)?;
    let corpus = synthetic_corpus(config.vocab, 3, 192, 8);
    let geometry = CacheGeometry::new(10, 50);

    let table = run_ablation(&model, &corpus, 8, geometry)?;
    println!("baseline perplexity {:.3}", table.ppl_orig());
    print!("{}", table.to_csv_string());

    for ratio in [0.25, 0.5, 1.0] {
        let mask = greedy_select(&table, ratio)?;
        println!("r={ratio:<4} retained {:?}", mask.layers());
    }
    Ok(())
}
