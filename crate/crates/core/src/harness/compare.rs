//! `faedkv compare`: per-position reconstruction error of the middle segment
//! right after prefill, for every (layer, head) of the model.
//!
//! Each head's error is also checked against an independent computation:
//! a dense DFT of the original middle segment with the kept bins zeroed and
//! transformed back. By linearity the two must agree.

use num_complex::Complex64;
use serde::Serialize;

use crate::ablation::KeptBins;
use crate::error::{Error, Result};
use crate::kv_cache::CompressedKv;
use crate::linalg::Matrix;
use crate::model::{CacheMode, HeadCache};
use crate::spectral;

use super::{emit, HarnessResult, RunConfig};

pub const COMPARE_SCHEMA: &str = "faedkv.compare/1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareConfig {
    pub sink: usize,
    pub recent: usize,
    pub chunks: usize,
    pub ratio: f64,
    pub mode: &'static str,
    pub prompt_len: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorStats {
    pub max: f64,
    pub mean: f64,
    pub rms: f64,
}

impl ErrorStats {
    fn of(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        Self {
            max: xs.iter().copied().fold(0.0, f64::max),
            mean: xs.iter().sum::<f64>() / n,
            rms: (xs.iter().map(|x| x * x).sum::<f64>() / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadFidelity {
    pub layer: usize,
    pub head: usize,
    pub kept_bins: usize,
    /// Per middle position, max over channels of |K − K_rec|.
    pub key_error: Vec<f64>,
    /// Per middle position, max over channels of |V − V_rec|.
    pub value_error: Vec<f64>,
    pub key_stats: ErrorStats,
    pub value_stats: ErrorStats,
    /// Largest elementwise gap between the reconstruction error and the
    /// inverse DFT of the removed bins.
    pub oracle_discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareSummary {
    pub max_error: f64,
    pub mean_error: f64,
    pub max_oracle_discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub schema: &'static str,
    pub config: CompareConfig,
    pub period: usize,
    pub heads: Vec<HeadFidelity>,
    pub summary: CompareSummary,
}

/// Inverse DFT of the bins *not* in `kept`, column by column.
pub fn removed_component(segment: &Matrix, kept: &KeptBins) -> Result<Matrix> {
    let (m, d) = segment.shape();
    let mut out = Matrix::zeros(m, d);
    for c in 0..d {
        let mut s = spectral::dft_forward(&segment.column(c))?;
        for &k in kept.indices() {
            s.bins_mut()[k] = Complex64::new(0.0, 0.0);
        }
        for (r, v) in spectral::idft_full(&s).into_iter().enumerate() {
            out.set(r, c, v);
        }
    }
    Ok(out)
}

fn row_max_abs(a: &Matrix, b: &Matrix) -> Vec<f64> {
    (0..a.rows())
        .map(|r| {
            a.row(r)
                .iter()
                .zip(b.row(r))
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Fidelity of one head's prefill compression.
pub fn head_fidelity(
    layer: usize,
    head: usize,
    keys: &Matrix,
    values: &Matrix,
    cache: &CompressedKv,
    kept: &KeptBins,
) -> Result<HeadFidelity> {
    let g = cache.geometry();
    let (s, e) = (g.sink, keys.rows() - g.recent);
    let (k_rec, v_rec) = cache.reconstruct();
    let k_mid = keys.slice_rows(s, e);
    let v_mid = values.slice_rows(s, e);
    let mut discrepancy: f64 = 0.0;
    for (orig, rec) in [(&k_mid, &k_rec), (&v_mid, &v_rec)] {
        let removed = removed_component(orig, kept)?;
        for ((o, r), x) in orig
            .as_slice()
            .iter()
            .zip(rec.as_slice())
            .zip(removed.as_slice())
        {
            discrepancy = discrepancy.max(((o - r) - x).abs());
        }
    }
    let key_error = row_max_abs(&k_mid, &k_rec);
    let value_error = row_max_abs(&v_mid, &v_rec);
    Ok(HeadFidelity {
        layer,
        head,
        kept_bins: kept.len(),
        key_stats: ErrorStats::of(&key_error),
        value_stats: ErrorStats::of(&value_error),
        key_error,
        value_error,
        oracle_discrepancy: discrepancy,
    })
}

pub fn compute(cfg: &RunConfig) -> HarnessResult<CompareReport> {
    let model = cfg.load_model()?;
    let prompt = cfg.load_prompt(&model)?;
    let geometry = cfg.geometry();
    let m = geometry
        .middle_len(prompt.len())
        .ok_or(Error::ContextTooShort {
            len: prompt.len(),
            needed: geometry.sink + geometry.recent,
        })?;
    let mask = cfg.resolve_mask(&model)?;
    let (state, _) = model.prefill(&prompt, &CacheMode::Full)?;
    let mut heads = Vec::new();
    for (l, layer) in state.layers().iter().enumerate() {
        let kept = mask.kept_bins(l, m)?;
        for (h, cache) in layer.iter().enumerate() {
            let HeadCache::Full(full) = cache else {
                unreachable!("full-cache prefill")
            };
            let (keys, values) = (full.keys(), full.values());
            let compressed =
                CompressedKv::prefill_compress(&keys, &values, &kept, geometry, cfg.mode)?;
            heads.push(head_fidelity(l, h, &keys, &values, &compressed, &kept)?);
        }
    }
    let all: Vec<f64> = heads
        .iter()
        .flat_map(|h| h.key_error.iter().chain(&h.value_error).copied())
        .collect();
    let summary = CompareSummary {
        max_error: all.iter().copied().fold(0.0, f64::max),
        mean_error: all.iter().sum::<f64>() / all.len().max(1) as f64,
        max_oracle_discrepancy: heads
            .iter()
            .map(|h| h.oracle_discrepancy)
            .fold(0.0, f64::max),
    };
    Ok(CompareReport {
        schema: COMPARE_SCHEMA,
        config: CompareConfig {
            sink: geometry.sink,
            recent: geometry.recent,
            chunks: cfg.chunks,
            ratio: cfg.ratio,
            mode: cfg.mode.name(),
            prompt_len: prompt.len(),
            seed: cfg.seed,
        },
        period: m,
        heads,
        summary,
    })
}

/// Replace every leaf of a JSON document with its type name and keep one
/// element of each array, giving a value-independent shape.
pub fn json_shape(v: &serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Null => Value::String("null".into()),
        Value::Bool(_) => Value::String("bool".into()),
        Value::Number(_) => Value::String("number".into()),
        Value::String(_) => Value::String("string".into()),
        Value::Array(items) => Value::Array(items.first().map(json_shape).into_iter().collect()),
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, v)| (k.clone(), json_shape(v)))
                .collect(),
        ),
    }
}

pub fn run(cfg: &RunConfig) -> HarnessResult<()> {
    let report = compute(cfg)?;
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
    emit(cfg.out.as_deref(), &json)
}
