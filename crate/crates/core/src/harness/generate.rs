//! `faedkv generate`: greedy decoding with a compressed cache, tracked step
//! by step against a full-cache run fed the same tokens.

use serde::Serialize;

use crate::error::Error;
use crate::kv_cache::MemoryReport;
use crate::model::{argmax, CacheMode, CompressionConfig, HeadCache, ToyModel};

use super::{emit, HarnessResult, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateReport {
    pub prompt_len: usize,
    pub steps: usize,
    pub sink: usize,
    pub recent: usize,
    pub headroom: usize,
    pub chunks: usize,
    pub ratio: f64,
    pub mode: &'static str,
    pub seed: u64,
    /// Greedy choices of the compressed run.
    pub generated: Vec<u32>,
    /// Greedy choices of an independent full-cache run.
    pub reference: Vec<u32>,
    pub identical: bool,
    /// Per step, max |compressed − full| over the logits both runs produce
    /// after the same token history.
    pub step_max_abs_logit_delta: Vec<f64>,
    pub max_abs_logit_delta: f64,
    /// Per step, gap between the two largest full-cache logits.
    pub reference_top2_gap: Vec<f64>,
    /// Layer 0, head 0 after the last step.
    pub memory: Option<MemoryReport>,
}

fn top2_gap(xs: &[f64]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &x in xs {
        if x > best {
            second = best;
            best = x;
        } else if x > second {
            second = x;
        }
    }
    best - second
}

pub fn compute(cfg: &RunConfig, model: &ToyModel, prompt: &[u32]) -> HarnessResult<GenerateReport> {
    if prompt.is_empty() {
        return Err(Error::InvalidInput("prompt is empty".into()).into());
    }
    let geometry = cfg.geometry();
    let needed = geometry.sink + geometry.recent + 2;
    if prompt.len() < needed {
        return Err(Error::ContextTooShort {
            len: prompt.len(),
            needed: needed - 1,
        }
        .into());
    }
    let steps = cfg.steps.unwrap_or(20);
    let mask = cfg.resolve_mask(model)?;
    let mode = CacheMode::Compressed(CompressionConfig {
        mask,
        geometry,
        mode: cfg.mode,
    });
    let (mut compressed, mut lc) = model.prefill(prompt, &mode)?;
    let (mut full, mut lf) = model.prefill(prompt, &CacheMode::Full)?;
    let mut generated = Vec::with_capacity(steps);
    let mut deltas = Vec::with_capacity(steps);
    let mut gaps = Vec::with_capacity(steps);
    for _ in 0..steps {
        deltas.push(
            lc.iter()
                .zip(&lf)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
        gaps.push(top2_gap(&lf));
        let next = argmax(&lc) as u32;
        generated.push(next);
        lc = model.decode_step(&mut compressed, next)?;
        lf = model.decode_step(&mut full, next)?;
    }
    let reference = model.generate(prompt, steps, &CacheMode::Full)?.tokens;
    let memory = match compressed.head(0, 0) {
        HeadCache::Compressed(c) => Some(c.memory_report()),
        HeadCache::Full(_) => None,
    };
    Ok(GenerateReport {
        prompt_len: prompt.len(),
        steps,
        sink: geometry.sink,
        recent: geometry.recent,
        headroom: geometry.headroom,
        chunks: cfg.chunks,
        ratio: cfg.ratio,
        mode: cfg.mode.name(),
        seed: cfg.seed,
        identical: generated == reference,
        generated,
        reference,
        max_abs_logit_delta: deltas.iter().copied().fold(0.0, f64::max),
        step_max_abs_logit_delta: deltas,
        reference_top2_gap: gaps,
        memory,
    })
}

pub fn run(cfg: &RunConfig) -> HarnessResult<()> {
    let model = cfg.load_model()?;
    let prompt = cfg.load_prompt(&model)?;
    let report = compute(cfg, &model, &prompt)?;
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
    emit(cfg.out.as_deref(), &json)
}
