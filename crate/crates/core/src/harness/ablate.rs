//! `faedkv ablate`: chunk importance tables, greedy masks and a
//! perplexity-versus-C sweep.
//!
//! Writes into the `--out` directory (default `.`):
//! `importance_c{C}.csv` (`layer,chunk,delta`), `mask_c{C}.json` and
//! `sweep.csv` (`chunks,ratio,ppl_full,ppl_masked`).

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use crate::ablation::{greedy_select, mean_perplexity, run_ablation, ImportanceTable, PruneMask};
use crate::model::{CacheMode, PrunedLayers, ToyModel};

use super::{HarnessResult, RunConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub chunks: usize,
    pub ratio: f64,
    pub ppl_full: f64,
    pub ppl_masked: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblateOutput {
    pub tables: Vec<ImportanceTable>,
    pub masks: Vec<PruneMask>,
    pub sweep: Vec<SweepRow>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("chunks,ratio,ppl_full,ppl_masked\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{}",
            r.chunks, r.ratio, r.ppl_full, r.ppl_masked
        )
        .expect("string write");
    }
    s
}

/// Ablate once per requested `C` and select masks at the configured ratio.
pub fn compute(cfg: &RunConfig, model: &ToyModel) -> HarnessResult<AblateOutput> {
    let corpus = cfg.load_corpus(model)?;
    let geometry = cfg.geometry();
    let values = cfg.sweep.clone().unwrap_or_else(|| vec![cfg.chunks]);
    let mut out = AblateOutput {
        tables: Vec::new(),
        masks: Vec::new(),
        sweep: Vec::new(),
    };
    for c in values {
        let table = run_ablation(model, &corpus, c, geometry)?;
        let mask = greedy_select(&table, cfg.ratio)?;
        let pruned = PrunedLayers::from_mask(&mask, geometry);
        let ppl_masked = mean_perplexity(model, &corpus, &CacheMode::Pruned(pruned))?;
        out.sweep.push(SweepRow {
            chunks: c,
            ratio: cfg.ratio,
            ppl_full: table.ppl_orig(),
            ppl_masked,
        });
        out.tables.push(table);
        out.masks.push(mask);
    }
    Ok(out)
}

pub fn run(cfg: &RunConfig) -> HarnessResult<()> {
    let model = cfg.load_model()?;
    let result = compute(cfg, &model)?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    for (table, mask) in result.tables.iter().zip(&result.masks) {
        let c = table.chunks();
        fs::write(
            dir.join(format!("importance_c{c}.csv")),
            table.to_csv_string(),
        )?;
        fs::write(dir.join(format!("mask_c{c}.json")), mask.to_json()? + "\n")?;
    }
    fs::write(dir.join("sweep.csv"), sweep_csv(&result.sweep))?;
    for row in &result.sweep {
        println!(
            "C={:<3} r={} ppl_full={:.6} ppl_masked={:.6}",
            row.chunks, row.ratio, row.ppl_full, row.ppl_masked
        );
    }
    Ok(())
}
