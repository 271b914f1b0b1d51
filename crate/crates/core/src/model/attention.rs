//! Scaled dot-product attention over explicit K/V rows.

use crate::error::{invalid, Result};
use crate::kv_cache::AssembledKv;
use crate::linalg::dot;

/// Max-subtracted softmax.
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    xs.iter_mut().for_each(|x| *x /= sum);
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    xs.iter().map(|x| x - lse).collect()
}

/// `softmax(q·Kᵀ/√d)·V` over row-major `keys`/`values` with `d` columns.
pub fn attend_rows(query: &[f64], keys: &[f64], values: &[f64], d: usize) -> Result<Vec<f64>> {
    if query.len() != d {
        return Err(invalid(format!(
            "query has {} channels, expected {d}",
            query.len()
        )));
    }
    if keys.is_empty() {
        return Err(invalid("cannot attend over an empty cache"));
    }
    if keys.len() != values.len() || !keys.len().is_multiple_of(d) {
        return Err(invalid("K/V blocks have inconsistent shapes"));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut weights: Vec<f64> = keys
        .chunks_exact(d)
        .map(|k| dot(query, k) * scale)
        .collect();
    softmax_in_place(&mut weights);
    let mut out = vec![0.0; d];
    for (w, v) in weights.iter().zip(values.chunks_exact(d)) {
        out.iter_mut().zip(v).for_each(|(o, x)| *o += w * x);
    }
    Ok(out)
}

pub fn attend(query: &[f64], kv: &AssembledKv) -> Result<Vec<f64>> {
    attend_rows(
        query,
        kv.keys.as_slice(),
        kv.values.as_slice(),
        kv.keys.cols(),
    )
}
