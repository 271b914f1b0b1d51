//! Frequency-chunk ablation and greedy chunk retention.
//!
//! The spectrum of the compressed middle segment is cut into `C` contiguous
//! chunks. Each (layer, chunk) cell is scored by zeroing that chunk in both K
//! and V of a single layer and measuring the normalized perplexity increase
//! `Δ = (PPL_pruned − PPL_orig) / PPL_orig`. Per layer, the `round(r·C)`
//! chunks with the largest Δ are retained.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kv_cache::CacheGeometry;
use crate::linalg::Matrix;
use crate::model::{CacheMode, PrunedLayers, ToyModel};
use crate::spectral::{self, Spectrum};

/// `C` contiguous chunks covering `[0, M)`. The first `C-1` chunks have
/// `floor(M/C)` bins; the last one takes the remainder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPartition {
    period: usize,
    boundaries: Vec<usize>,
}

pub fn partition(period: usize, chunks: usize) -> Result<ChunkPartition> {
    if chunks == 0 {
        return Err(invalid("chunk count must be at least 1"));
    }
    if chunks > period {
        return Err(invalid(format!(
            "{chunks} chunks cannot partition {period} bins"
        )));
    }
    let width = period / chunks;
    let mut boundaries: Vec<usize> = (0..chunks).map(|c| c * width).collect();
    boundaries.push(period);
    Ok(ChunkPartition { period, boundaries })
}

impl ChunkPartition {
    pub fn period(&self) -> usize {
        self.period
    }

    pub fn chunk_count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn chunk(&self, c: usize) -> std::ops::Range<usize> {
        self.boundaries[c]..self.boundaries[c + 1]
    }

    pub fn chunk_len(&self, c: usize) -> usize {
        self.boundaries[c + 1] - self.boundaries[c]
    }

    /// Union of the given chunks' bins, ascending.
    pub fn bins_of(&self, chunks: &[usize]) -> Result<KeptBins> {
        let mut sorted = chunks.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut indices = Vec::new();
        for &c in &sorted {
            if c >= self.chunk_count() {
                return Err(invalid(format!(
                    "chunk {c} out of range 0..{}",
                    self.chunk_count()
                )));
            }
            indices.extend(self.chunk(c));
        }
        Ok(KeptBins {
            period: self.period,
            indices,
        })
    }
}

/// Bins that survive pruning for a segment of a given period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeptBins {
    period: usize,
    indices: Vec<usize>,
}

impl KeptBins {
    pub fn new(period: usize, indices: Vec<usize>) -> Result<Self> {
        if period == 0 {
            return Err(invalid("period must be positive"));
        }
        spectral::validate_kept(period, &indices)?;
        Ok(Self { period, indices })
    }

    pub fn all(period: usize) -> Self {
        Self {
            period,
            indices: (0..period).collect(),
        }
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn removed(&self) -> Vec<usize> {
        let mut keep = vec![false; self.period];
        self.indices.iter().for_each(|&k| keep[k] = true);
        (0..self.period).filter(|&k| !keep[k]).collect()
    }
}

/// Zero every bin of chunk `c`; other bins are left untouched.
pub fn zero_chunk(spectrum: &Spectrum, partition: &ChunkPartition, c: usize) -> Result<Spectrum> {
    if spectrum.period() != partition.period() {
        return Err(invalid("spectrum and partition periods differ"));
    }
    if c >= partition.chunk_count() {
        return Err(invalid(format!(
            "chunk {c} out of range 0..{}",
            partition.chunk_count()
        )));
    }
    let mut out = spectrum.clone();
    for b in &mut out.bins_mut()[partition.chunk(c)] {
        *b = Complex64::new(0.0, 0.0);
    }
    Ok(out)
}

/// Normalized perplexity increase.
pub fn delta_score(ppl_pruned: f64, ppl_orig: f64) -> Result<f64> {
    if ppl_orig.is_nan() || ppl_orig <= 0.0 {
        return Err(invalid(format!(
            "baseline perplexity must be positive, got {ppl_orig}"
        )));
    }
    Ok((ppl_pruned - ppl_orig) / ppl_orig)
}

/// Keep only `kept` bins of each column of `segment` and transform back.
pub fn prune_columns(segment: &Matrix, kept: &KeptBins) -> Result<Matrix> {
    let (m, d) = segment.shape();
    if m != kept.period() {
        return Err(invalid(format!(
            "segment has {m} rows, kept bins are for period {}",
            kept.period()
        )));
    }
    let mut mask = vec![false; m];
    kept.indices().iter().for_each(|&k| mask[k] = true);
    let mut out = Matrix::zeros(m, d);
    for c in 0..d {
        let mut spectrum = spectral::dft_forward(&segment.column(c))?;
        for (b, &keep) in spectrum.bins_mut().iter_mut().zip(&mask) {
            if !keep {
                *b = Complex64::new(0.0, 0.0);
            }
        }
        for (r, v) in spectral::idft_full(&spectrum).into_iter().enumerate() {
            out.set(r, c, v);
        }
    }
    Ok(out)
}

/// Δ scores indexed by (layer, chunk).
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceTable {
    layers: usize,
    chunks: usize,
    deltas: Vec<f64>,
    ppl_orig: f64,
}

impl ImportanceTable {
    pub fn new(layers: usize, chunks: usize, deltas: Vec<f64>, ppl_orig: f64) -> Result<Self> {
        if chunks == 0 {
            return Err(invalid("importance table needs at least one chunk"));
        }
        if deltas.len() != layers * chunks {
            return Err(invalid(format!(
                "{} deltas for a {layers}x{chunks} table",
                deltas.len()
            )));
        }
        if deltas.iter().any(|d| !d.is_finite()) {
            return Err(invalid("delta values must be finite"));
        }
        Ok(Self {
            layers,
            chunks,
            deltas,
            ppl_orig,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], ppl_orig: f64) -> Result<Self> {
        let chunks = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != chunks) {
            return Err(invalid("ragged importance rows"));
        }
        Self::new(rows.len(), chunks, rows.concat(), ppl_orig)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn chunks(&self) -> usize {
        self.chunks
    }

    pub fn ppl_orig(&self) -> f64 {
        self.ppl_orig
    }

    pub fn delta(&self, layer: usize, chunk: usize) -> f64 {
        self.deltas[layer * self.chunks + chunk]
    }

    pub fn row(&self, layer: usize) -> &[f64] {
        &self.deltas[layer * self.chunks..(layer + 1) * self.chunks]
    }

    /// `layer,chunk,delta`, layer-major.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "layer,chunk,delta")?;
        for l in 0..self.layers {
            for c in 0..self.chunks {
                writeln!(w, "{l},{c},{}", self.delta(l, c))?;
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("ascii")
    }

    /// Parses the CSV written by [`write_csv`](Self::write_csv). The baseline
    /// perplexity is not part of the file and is set to NaN.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            what: "importance CSV",
            reason,
        };
        let mut lines = r.lines();
        match lines.next().transpose()? {
            Some(h) if h.trim() == "layer,chunk,delta" => {}
            other => return Err(bad(format!("unexpected header {other:?}"))),
        }
        let mut cells = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.trim().split(',').collect();
            if parts.len() != 3 {
                return Err(bad(format!("line {}: expected 3 fields", i + 2)));
            }
            let parse_err = |e: String| bad(format!("line {}: {e}", i + 2));
            let l: usize = parts[0].parse().map_err(|e| parse_err(format!("{e}")))?;
            let c: usize = parts[1].parse().map_err(|e| parse_err(format!("{e}")))?;
            let d: f64 = parts[2].parse().map_err(|e| parse_err(format!("{e}")))?;
            cells.push((l, c, d));
        }
        let layers = cells.iter().map(|x| x.0 + 1).max().unwrap_or(0);
        let chunks = cells.iter().map(|x| x.1 + 1).max().unwrap_or(0);
        if cells.len() != layers * chunks {
            return Err(bad("table is not rectangular".into()));
        }
        let mut deltas = vec![f64::NAN; layers * chunks];
        for (l, c, d) in cells {
            deltas[l * chunks + c] = d;
        }
        Self::new(layers, chunks, deltas, f64::NAN)
    }
}

/// Per-layer retained chunks. Serialized as
/// `{ "C": int, "r": float, "layers": [[chunk indices]...] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    #[serde(rename = "C")]
    chunks: usize,
    #[serde(rename = "r")]
    ratio: f64,
    layers: Vec<Vec<usize>>,
}

impl PruneMask {
    pub fn new(chunks: usize, ratio: f64, layers: Vec<Vec<usize>>) -> Result<Self> {
        let mask = Self {
            chunks,
            ratio,
            layers,
        };
        mask.validate()?;
        Ok(mask)
    }

    /// Every chunk retained on every layer.
    pub fn full(layers: usize, chunks: usize) -> Self {
        Self {
            chunks,
            ratio: 1.0,
            layers: vec![(0..chunks).collect(); layers],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.chunks == 0 {
            return Err(invalid("mask must have at least one chunk"));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(invalid(format!(
                "retention ratio {} outside (0, 1]",
                self.ratio
            )));
        }
        let expected = retained_count(self.ratio, self.chunks);
        for (l, row) in self.layers.iter().enumerate() {
            if row.windows(2).any(|w| w[0] >= w[1]) || row.iter().any(|&c| c >= self.chunks) {
                return Err(invalid(format!(
                    "layer {l}: chunk list must be increasing and < C"
                )));
            }
            if row.len() != expected {
                return Err(invalid(format!(
                    "layer {l} retains {} chunks, round(r*C) = {expected}",
                    row.len()
                )));
            }
        }
        Ok(())
    }

    pub fn chunks(&self) -> usize {
        self.chunks
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn layers(&self) -> &[Vec<usize>] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn retained(&self, layer: usize) -> &[usize] {
        &self.layers[layer]
    }

    /// Kept bins of `layer` for a segment with `period` bins.
    pub fn kept_bins(&self, layer: usize, period: usize) -> Result<KeptBins> {
        let row = self
            .layers
            .get(layer)
            .ok_or_else(|| invalid(format!("mask has no layer {layer}")))?;
        partition(period, self.chunks)?.bins_of(row)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mask: Self = serde_json::from_str(s)?;
        mask.validate()?;
        Ok(mask)
    }
}

/// `round(r·C)`, half away from zero.
pub fn retained_count(ratio: f64, chunks: usize) -> usize {
    (ratio * chunks as f64).round() as usize
}

/// Top `round(r·C)` chunks per layer by Δ; equal Δ goes to the lower index.
pub fn greedy_select(table: &ImportanceTable, ratio: f64) -> Result<PruneMask> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(invalid(format!("retention ratio {ratio} outside (0, 1]")));
    }
    let keep = retained_count(ratio, table.chunks());
    let layers = (0..table.layers())
        .map(|l| {
            let row = table.row(l);
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            let mut chosen = order[..keep].to_vec();
            chosen.sort_unstable();
            chosen
        })
        .collect();
    PruneMask::new(table.chunks(), ratio, layers)
}

/// Mean perplexity of `corpus` under `mode`.
pub fn mean_perplexity(model: &ToyModel, corpus: &[Vec<u32>], mode: &CacheMode) -> Result<f64> {
    let ppl = corpus
        .iter()
        .map(|seq| model.perplexity(mode, seq))
        .collect::<Result<Vec<_>>>()?;
    Ok(ppl.iter().sum::<f64>() / ppl.len() as f64)
}

/// Layer-wise ablation over the middle segment `[S, N−R)` of every sequence.
///
/// Perplexities are averaged over the corpus before Δ is formed. Cells are
/// evaluated in parallel; the result is independent of scheduling.
pub fn run_ablation(
    model: &ToyModel,
    corpus: &[Vec<u32>],
    chunks: usize,
    geometry: CacheGeometry,
) -> Result<ImportanceTable> {
    if corpus.is_empty() {
        return Err(invalid("ablation corpus is empty"));
    }
    for seq in corpus {
        if seq.len() < 2 {
            return Err(invalid("every corpus sequence needs at least 2 tokens"));
        }
        let needed = geometry.sink + geometry.recent + chunks;
        if seq.len() < needed {
            return Err(Error::ContextTooShort {
                len: seq.len(),
                needed: needed - 1,
            });
        }
    }
    let layers = model.config().layers;
    let ppl_orig = mean_perplexity(model, corpus, &CacheMode::Full)?;
    let cells: Vec<(usize, usize)> = (0..layers)
        .flat_map(|l| (0..chunks).map(move |c| (l, c)))
        .collect();
    let deltas = cells
        .par_iter()
        .map(|&(l, c)| {
            let mut per_layer = vec![None; layers];
            per_layer[l] = Some((0..chunks).filter(|&x| x != c).collect());
            let pruned = PrunedLayers::new(chunks, geometry, per_layer);
            let ppl = mean_perplexity(model, corpus, &CacheMode::Pruned(pruned))?;
            delta_score(ppl, ppl_orig)
        })
        .collect::<Result<Vec<_>>>()?;
    ImportanceTable::new(layers, chunks, deltas, ppl_orig)
}
