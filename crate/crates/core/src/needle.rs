//! Needle-in-a-haystack retrieval probes.
//!
//! A probe is a single attention head's K/V over `context_len` tokens. Keys
//! are random unit vectors except the needle, which is a unit vector `u`
//! scaled by [`NEEDLE_GAIN`]; the query is parallel to `u`. Retrieval
//! succeeds when the highest attention score lands on the needle position.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::ablation::{greedy_select, partition, ImportanceTable, KeptBins};
use crate::error::{invalid, Result};
use crate::iwdft::NormalizationMode;
use crate::kv_cache::{CacheGeometry, CompressedKv};
use crate::linalg::{dot, Matrix};
use crate::model::argmax;
use crate::spectral;

/// Ratio between the needle key's norm and every other key's norm.
pub const NEEDLE_GAIN: f64 = 2.0;

/// Relative depths 0%, 12.5%, ..., 100%.
pub const NEEDLE_DEPTHS: [f64; 9] = [0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct NeedleProbe {
    pub keys: Matrix,
    pub values: Matrix,
    pub query: Vec<f64>,
    pub answer: usize,
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Token index of a relative depth in `[0, 1]`.
pub fn depth_position(depth: f64, context_len: usize) -> usize {
    (depth * (context_len - 1) as f64).round() as usize
}

pub fn build_needle_probe(
    context_len: usize,
    needle_pos: usize,
    d: usize,
    seed: u64,
) -> Result<NeedleProbe> {
    if needle_pos >= context_len {
        return Err(invalid(format!(
            "needle position {needle_pos} outside context of {context_len}"
        )));
    }
    if d == 0 {
        return Err(invalid("head width must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys = Matrix::zeros(context_len, d);
    let mut values = Matrix::zeros(context_len, d);
    for i in 0..context_len {
        keys.row_mut(i).copy_from_slice(&unit_vector(&mut rng, d));
        values.row_mut(i).copy_from_slice(&unit_vector(&mut rng, d));
    }
    let u = unit_vector(&mut rng, d);
    for (k, &x) in keys.row_mut(needle_pos).iter_mut().zip(&u) {
        *k = NEEDLE_GAIN * x;
    }
    let scale = (d as f64).sqrt();
    Ok(NeedleProbe {
        keys,
        values,
        query: u.iter().map(|x| x * scale).collect(),
        answer: needle_pos,
    })
}

impl NeedleProbe {
    pub fn context_len(&self) -> usize {
        self.keys.rows()
    }

    /// Top-scoring position over the uncompressed keys.
    pub fn retrieve_full(&self) -> usize {
        let scores: Vec<f64> = (0..self.context_len())
            .map(|i| dot(&self.query, self.keys.row(i)))
            .collect();
        argmax(&scores)
    }

    /// Top-scoring position after prefill compression with `kept` bins.
    pub fn retrieve_compressed(
        &self,
        kept: &KeptBins,
        geometry: CacheGeometry,
        mode: NormalizationMode,
    ) -> Result<usize> {
        let cache = CompressedKv::prefill_compress(&self.keys, &self.values, kept, geometry, mode)?;
        Ok(argmax(&cache.attention_scores(&self.query)?))
    }

    /// Top-scoring position when the middle segment is dropped entirely.
    pub fn retrieve_truncated(&self, geometry: CacheGeometry) -> Result<usize> {
        let n = self.context_len();
        if geometry.sink + geometry.recent > n {
            return Err(invalid("sink and recent window exceed the context"));
        }
        let kept: Vec<usize> = (0..geometry.sink).chain(n - geometry.recent..n).collect();
        let scores: Vec<f64> = kept
            .iter()
            .map(|&i| dot(&self.query, self.keys.row(i)))
            .collect();
        Ok(kept[argmax(&scores)])
    }

    /// Per-chunk spectral energy of the middle keys, as a one-layer table.
    pub fn chunk_energy(&self, geometry: CacheGeometry, chunks: usize) -> Result<ImportanceTable> {
        let n = self.context_len();
        let m = geometry
            .middle_len(n)
            .ok_or_else(|| invalid("context has no middle segment"))?;
        let part = partition(m, chunks)?;
        let middle = self.keys.slice_rows(geometry.sink, n - geometry.recent);
        let mut energy = vec![0.0; m];
        for c in 0..middle.cols() {
            let s = spectral::dft_forward(&middle.column(c))?;
            energy
                .iter_mut()
                .zip(s.bins())
                .for_each(|(e, b)| *e += b.norm_sqr());
        }
        let row: Vec<f64> = (0..chunks)
            .map(|c| energy[part.chunk(c)].iter().sum())
            .collect();
        ImportanceTable::from_rows(&[row], f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NeedleStrategy {
    /// Prefill compression keeping `round(ratio·chunks)` chunks chosen by
    /// spectral energy.
    Compressed {
        ratio: f64,
        chunks: usize,
        mode: NormalizationMode,
    },
    /// Sink and recent window only.
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeedleCell {
    pub context_len: usize,
    pub depth: f64,
    pub ratio: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NeedleSettings {
    pub geometry: CacheGeometry,
    pub head_dim: usize,
    pub reps: usize,
    pub seed: u64,
}

fn mix(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for x in [a, b, c] {
        h ^= x
            .wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

/// One probe: does `strategy` retrieve the needle?
pub fn probe_once(
    context_len: usize,
    needle_pos: usize,
    strategy: NeedleStrategy,
    settings: &NeedleSettings,
    rep: usize,
) -> Result<bool> {
    let seed = mix(
        settings.seed,
        context_len as u64,
        needle_pos as u64,
        rep as u64,
    );
    let probe = build_needle_probe(context_len, needle_pos, settings.head_dim, seed)?;
    let geometry = settings.geometry;
    let found = match strategy {
        NeedleStrategy::Truncated => probe.retrieve_truncated(geometry)?,
        NeedleStrategy::Compressed {
            ratio,
            chunks,
            mode,
        } => match geometry.middle_len(context_len) {
            None => probe.retrieve_full(),
            Some(m) => {
                let mask = greedy_select(&probe.chunk_energy(geometry, chunks)?, ratio)?;
                let kept = mask.kept_bins(0, m)?;
                probe.retrieve_compressed(&kept, geometry, mode)?
            }
        },
    };
    Ok(found == probe.answer)
}

/// Fraction of `reps` probes that retrieve the needle at `depth`.
pub fn needle_accuracy(
    context_len: usize,
    depth: f64,
    strategy: NeedleStrategy,
    settings: &NeedleSettings,
) -> Result<f64> {
    if settings.reps == 0 {
        return Err(invalid("at least one repetition is required"));
    }
    if !(0.0..=1.0).contains(&depth) || context_len == 0 {
        return Err(invalid(format!(
            "depth {depth} outside [0, 1] or empty context"
        )));
    }
    let pos = depth_position(depth, context_len);
    let hits = (0..settings.reps)
        .into_par_iter()
        .map(|rep| probe_once(context_len, pos, strategy, settings, rep))
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / settings.reps as f64)
}

/// Accuracy at every depth in [`NEEDLE_DEPTHS`] for each context length.
pub fn needle_sweep(
    lengths: &[usize],
    strategy: NeedleStrategy,
    settings: &NeedleSettings,
) -> Result<Vec<NeedleCell>> {
    let ratio = match strategy {
        NeedleStrategy::Compressed { ratio, .. } => ratio,
        NeedleStrategy::Truncated => 0.0,
    };
    let mut cells = Vec::new();
    for &n in lengths {
        for &depth in &NEEDLE_DEPTHS {
            cells.push(NeedleCell {
                context_len: n,
                depth,
                ratio,
                accuracy: needle_accuracy(n, depth, strategy, settings)?,
            });
        }
    }
    Ok(cells)
}

/// Whether a needle at `pos` sits in the verbatim sink or recent window.
pub fn is_protected(pos: usize, context_len: usize, geometry: CacheGeometry) -> bool {
    pos < geometry.sink || pos + geometry.recent >= context_len
}
