//! `faedkv needle`: retrieval accuracy per depth.
//!
//! CSV columns `context_len,depth,r,accuracy`. Rows with `r = 0` are the
//! truncation baseline, which keeps only the sink and the recent window.

use std::fmt::Write as _;

use serde::Serialize;

use crate::needle::{
    depth_position, is_protected, needle_sweep, NeedleCell, NeedleSettings, NeedleStrategy,
};

use super::{emit, HarnessResult, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeedleSummary {
    pub context_len: usize,
    /// max − min accuracy over depths outside the sink and recent window.
    pub middle_spread: f64,
    pub middle_min: f64,
    pub protected_min: f64,
    pub truncated_middle_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeedleOutput {
    pub compressed: Vec<NeedleCell>,
    pub truncated: Vec<NeedleCell>,
    pub summaries: Vec<NeedleSummary>,
}

pub fn settings(cfg: &RunConfig) -> NeedleSettings {
    NeedleSettings {
        geometry: cfg.geometry(),
        head_dim: cfg.head_dim.unwrap_or(64),
        reps: cfg.reps.unwrap_or(50),
        seed: cfg.seed,
    }
}

pub fn compute(cfg: &RunConfig) -> HarnessResult<NeedleOutput> {
    let lengths = cfg.lengths.clone().unwrap_or_else(|| vec![2048]);
    let s = settings(cfg);
    let strategy = NeedleStrategy::Compressed {
        ratio: cfg.ratio,
        chunks: cfg.chunks,
        mode: cfg.mode,
    };
    let compressed = needle_sweep(&lengths, strategy, &s)?;
    let truncated = needle_sweep(&lengths, NeedleStrategy::Truncated, &s)?;
    let summaries = lengths
        .iter()
        .map(|&n| {
            let protected =
                |c: &&NeedleCell| is_protected(depth_position(c.depth, n), n, s.geometry);
            let of_len = |cells: &[NeedleCell]| -> Vec<NeedleCell> {
                cells
                    .iter()
                    .filter(|c| c.context_len == n)
                    .copied()
                    .collect()
            };
            let comp = of_len(&compressed);
            let trunc = of_len(&truncated);
            let middle: Vec<f64> = comp
                .iter()
                .filter(|c| !protected(c))
                .map(|c| c.accuracy)
                .collect();
            let max = middle.iter().copied().fold(f64::NAN, f64::max);
            let min = middle.iter().copied().fold(f64::NAN, f64::min);
            NeedleSummary {
                context_len: n,
                middle_spread: max - min,
                middle_min: min,
                protected_min: comp
                    .iter()
                    .filter(protected)
                    .map(|c| c.accuracy)
                    .fold(f64::NAN, f64::min),
                truncated_middle_max: trunc
                    .iter()
                    .filter(|c| !protected(c))
                    .map(|c| c.accuracy)
                    .fold(f64::NAN, f64::max),
            }
        })
        .collect();
    Ok(NeedleOutput {
        compressed,
        truncated,
        summaries,
    })
}

pub fn needle_csv(cells: &[NeedleCell]) -> String {
    let mut s = String::from("context_len,depth,r,accuracy\n");
    for c in cells {
        writeln!(
            s,
            "{},{},{},{}",
            c.context_len, c.depth, c.ratio, c.accuracy
        )
        .expect("string write");
    }
    s
}

pub fn run(cfg: &RunConfig) -> HarnessResult<()> {
    let out = compute(cfg)?;
    let all: Vec<NeedleCell> = out
        .compressed
        .iter()
        .chain(&out.truncated)
        .copied()
        .collect();
    let csv = needle_csv(&all);
    match &cfg.out {
        Some(path) => emit(Some(path), &csv)?,
        None => print!("{csv}"),
    }
    for s in &out.summaries {
        eprintln!(
            "context {}: middle spread {:.3} (min {:.3}), protected min {:.3}, truncated middle max {:.3}",
            s.context_len, s.middle_spread, s.middle_min, s.protected_min, s.truncated_middle_max
        );
    }
    Ok(())
}
