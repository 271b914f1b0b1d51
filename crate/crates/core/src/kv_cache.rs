//! Compressed KV cache for one attention head.
//!
//! Layout along the token axis:
//!
//! ```text
//! [ sink: first S tokens | frequency segment: M bins | recent window ]
//! ```
//!
//! The sink and the recent window are kept verbatim. The middle `M = N−S−R`
//! prompt tokens are transformed with a DFT, pruned to the layer's kept bins
//! and stored as an [`IwdftState`] in `DFT/M` units with a count of `M`.
//! Tokens that age out of the recent window are folded into that state; the
//! period `M` never changes, so tokens beyond `M` alias onto existing
//! positions.
//!
//! The recent window holds the last `R` prompt tokens after prefill and may
//! grow by `headroom` generated tokens before anything ages out.

use std::collections::VecDeque;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ablation::KeptBins;
use crate::binio::*;
use crate::error::{invalid, Error, Result};
use crate::iwdft::{IwdftState, NormalizationMode};
use crate::linalg::{dot, Matrix};
use crate::model::attention::{attend_rows, softmax_in_place};
use crate::spectral;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"FKVC";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheGeometry {
    /// Attention-sink tokens kept verbatim.
    pub sink: usize,
    /// Prompt tokens kept verbatim at the end of the context.
    pub recent: usize,
    /// Generated tokens the recent window absorbs before tokens age out.
    pub headroom: usize,
}

impl CacheGeometry {
    /// Headroom defaults to `recent`.
    pub const fn new(sink: usize, recent: usize) -> Self {
        Self {
            sink,
            recent,
            headroom: recent,
        }
    }

    pub const fn with_headroom(self, headroom: usize) -> Self {
        Self { headroom, ..self }
    }

    pub fn window_capacity(&self) -> usize {
        self.recent + self.headroom
    }

    /// `N − S − R` when positive.
    pub fn middle_len(&self, tokens: usize) -> Option<usize> {
        tokens
            .checked_sub(self.sink + self.recent)
            .filter(|&m| m > 0)
    }
}

impl Default for CacheGeometry {
    fn default() -> Self {
        Self::new(10, 50)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySegment {
    pub keys: IwdftState,
    pub values: IwdftState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedKv {
    geometry: CacheGeometry,
    head_dim: usize,
    sink_keys: Vec<Vec<f64>>,
    sink_values: Vec<Vec<f64>>,
    frequency: Option<FrequencySegment>,
    recent_keys: VecDeque<Vec<f64>>,
    recent_values: VecDeque<Vec<f64>>,
    total: usize,
}

/// `K` and `V` in attention order: sink, reconstructed middle, recent.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledKv {
    pub keys: Matrix,
    pub values: Matrix,
}

impl AssembledKv {
    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub tokens: usize,
    pub head_dim: usize,
    pub period: usize,
    pub kept_bins: usize,
    pub sink_reals: usize,
    pub recent_reals: usize,
    /// Two complex states (K and V), two reals per coefficient.
    pub frequency_reals: usize,
    pub compressed_reals: usize,
    pub uncompressed_reals: usize,
    /// `compressed_reals / uncompressed_reals`.
    pub ratio: f64,
    /// Frequency storage over the real storage of an uncompressed middle
    /// segment: `2·kept_bins/M`.
    pub middle_ratio: f64,
}

fn check_rows(m: &Matrix, what: &str) -> Result<()> {
    if !m.is_finite() {
        return Err(invalid(format!("{what} contains non-finite entries")));
    }
    Ok(())
}

impl CompressedKv {
    /// Compress a prompt's K/V (`N × d`): rows `[0, S)` become the sink, rows
    /// `[N−R, N)` the recent window, and the middle is transformed and pruned.
    pub fn prefill_compress(
        keys: &Matrix,
        values: &Matrix,
        kept: &KeptBins,
        geometry: CacheGeometry,
        mode: NormalizationMode,
    ) -> Result<Self> {
        if keys.shape() != values.shape() {
            return Err(invalid("K and V shapes differ"));
        }
        check_rows(keys, "K")?;
        check_rows(values, "V")?;
        let n = keys.rows();
        let m = geometry.middle_len(n).ok_or(Error::ContextTooShort {
            len: n,
            needed: geometry.sink + geometry.recent,
        })?;
        if kept.period() != m {
            return Err(invalid(format!(
                "kept bins are for period {}, middle segment has {m} tokens",
                kept.period()
            )));
        }
        let d = keys.cols();
        let (s, tail) = (geometry.sink, n - geometry.recent);
        let frequency = FrequencySegment {
            keys: IwdftState::from_segment(
                &keys.slice_rows(s, tail),
                kept.indices().to_vec(),
                mode,
            )?,
            values: IwdftState::from_segment(
                &values.slice_rows(s, tail),
                kept.indices().to_vec(),
                mode,
            )?,
        };
        Ok(Self {
            geometry,
            head_dim: d,
            sink_keys: (0..s).map(|r| keys.row(r).to_vec()).collect(),
            sink_values: (0..s).map(|r| values.row(r).to_vec()).collect(),
            frequency: Some(frequency),
            recent_keys: (tail..n).map(|r| keys.row(r).to_vec()).collect(),
            recent_values: (tail..n).map(|r| values.row(r).to_vec()).collect(),
            total: n,
        })
    }

    /// Verbatim cache used when the prompt is too short to compress.
    pub fn uncompressed(keys: &Matrix, values: &Matrix, geometry: CacheGeometry) -> Result<Self> {
        if keys.shape() != values.shape() {
            return Err(invalid("K and V shapes differ"));
        }
        let mut cache = Self::empty(geometry, keys.cols());
        for r in 0..keys.rows() {
            cache.append_token(keys.row(r), values.row(r))?;
        }
        Ok(cache)
    }

    pub fn empty(geometry: CacheGeometry, head_dim: usize) -> Self {
        Self {
            geometry,
            head_dim,
            sink_keys: Vec::new(),
            sink_values: Vec::new(),
            frequency: None,
            recent_keys: VecDeque::new(),
            recent_values: VecDeque::new(),
            total: 0,
        }
    }

    /// Compress when the prompt is long enough, otherwise keep it verbatim.
    pub fn from_prefill(
        keys: &Matrix,
        values: &Matrix,
        kept: impl FnOnce(usize) -> Result<KeptBins>,
        geometry: CacheGeometry,
        mode: NormalizationMode,
    ) -> Result<Self> {
        match geometry.middle_len(keys.rows()) {
            Some(m) => Self::prefill_compress(keys, values, &kept(m)?, geometry, mode),
            None => Self::uncompressed(keys, values, geometry),
        }
    }

    pub fn geometry(&self) -> CacheGeometry {
        self.geometry
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    /// Tokens represented by the cache (`N_cur`).
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn sink_len(&self) -> usize {
        self.sink_keys.len()
    }

    pub fn recent_len(&self) -> usize {
        self.recent_keys.len()
    }

    pub fn frequency(&self) -> Option<&FrequencySegment> {
        self.frequency.as_ref()
    }

    /// `M`, or 0 for an uncompressed cache.
    pub fn period(&self) -> usize {
        self.frequency.as_ref().map_or(0, |f| f.keys.period())
    }

    pub fn tokens_folded(&self) -> u64 {
        self.frequency
            .as_ref()
            .map_or(0, |f| f.keys.tokens_folded())
    }

    pub fn kept_bins(&self) -> usize {
        self.frequency
            .as_ref()
            .map_or(0, |f| f.keys.kept_indices().len())
    }

    pub fn sink_row(&self, i: usize) -> (&[f64], &[f64]) {
        (&self.sink_keys[i], &self.sink_values[i])
    }

    pub fn recent_row(&self, i: usize) -> (&[f64], &[f64]) {
        (&self.recent_keys[i], &self.recent_values[i])
    }

    /// Push a new token. Once the recent window exceeds `R + headroom`, its
    /// oldest token is folded into the frequency state. A cache without a
    /// frequency segment just grows.
    pub fn append_token(&mut self, key: &[f64], value: &[f64]) -> Result<()> {
        if key.len() != self.head_dim || value.len() != self.head_dim {
            return Err(invalid(format!(
                "token vectors must have {} channels",
                self.head_dim
            )));
        }
        if key.iter().chain(value).any(|v| !v.is_finite()) {
            return Err(invalid("token vectors must be finite"));
        }
        if self.sink_keys.len() < self.geometry.sink
            && self.frequency.is_none()
            && self.recent_keys.is_empty()
        {
            self.sink_keys.push(key.to_vec());
            self.sink_values.push(value.to_vec());
            self.total += 1;
            return Ok(());
        }
        self.recent_keys.push_back(key.to_vec());
        self.recent_values.push_back(value.to_vec());
        if let Some(freq) = self.frequency.as_mut() {
            if self.recent_keys.len() > self.geometry.window_capacity() {
                let k = self.recent_keys.pop_front().expect("window non-empty");
                let v = self.recent_values.pop_front().expect("window non-empty");
                freq.keys.update(&k)?;
                freq.values.update(&v)?;
            }
        }
        self.total += 1;
        Ok(())
    }

    /// Middle segment back in the time domain, `M × d` each.
    pub fn reconstruct(&self) -> (Matrix, Matrix) {
        match &self.frequency {
            Some(f) => (f.keys.synthesize(), f.values.synthesize()),
            None => (
                Matrix::zeros(0, self.head_dim),
                Matrix::zeros(0, self.head_dim),
            ),
        }
    }

    pub fn assemble(&self) -> AssembledKv {
        let (mid_k, mid_v) = self.reconstruct();
        let d = self.head_dim;
        let rows = |src: &mut dyn Iterator<Item = &Vec<f64>>| {
            let collected: Vec<&Vec<f64>> = src.collect();
            Matrix::from_rows(&collected, d).expect("rows have head_dim entries")
        };
        let sink_k = rows(&mut self.sink_keys.iter());
        let sink_v = rows(&mut self.sink_values.iter());
        let rec_k = rows(&mut self.recent_keys.iter());
        let rec_v = rows(&mut self.recent_values.iter());
        AssembledKv {
            keys: Matrix::vstack(&[&sink_k, &mid_k, &rec_k]).expect("same width"),
            values: Matrix::vstack(&[&sink_v, &mid_v, &rec_v]).expect("same width"),
        }
    }

    /// Scaled scores `q·k/√d` for every assembled row, computed without
    /// materializing the middle keys: the query is projected onto the kept
    /// bins and a single inverse FFT yields all `M` middle scores.
    pub fn attention_scores(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.head_dim {
            return Err(invalid("query width differs from head_dim"));
        }
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut scores = Vec::with_capacity(self.sink_len() + self.period() + self.recent_len());
        scores.extend(self.sink_keys.iter().map(|k| dot(query, k) * scale));
        if let Some(f) = &self.frequency {
            let m = f.keys.period();
            let d = self.head_dim;
            let mut z = vec![Complex64::new(0.0, 0.0); m];
            for (slot, &k) in f.keys.kept_indices().iter().enumerate() {
                let bins = &f.keys.bins()[slot * d..(slot + 1) * d];
                z[k] = bins.iter().zip(query).map(|(b, &q)| b * q).sum();
            }
            spectral::inverse_plan(m).process(&mut z);
            let gain = f.keys.reconstruction_gain() * scale;
            scores.extend(z.iter().map(|v| v.re * gain));
        }
        scores.extend(self.recent_keys.iter().map(|k| dot(query, k) * scale));
        Ok(scores)
    }

    /// Same result as attending over [`assemble`](Self::assemble), with
    /// `O(kept·d + M log M)` work for the middle segment.
    pub fn attend_fused(&self, query: &[f64]) -> Result<Vec<f64>> {
        if self.total == 0 {
            return Err(invalid("cannot attend over an empty cache"));
        }
        let mut weights = self.attention_scores(query)?;
        softmax_in_place(&mut weights);
        let d = self.head_dim;
        let mut out = vec![0.0; d];
        let s = self.sink_len();
        let m = self.period();
        for (w, v) in weights[..s].iter().zip(&self.sink_values) {
            out.iter_mut().zip(v).for_each(|(o, x)| *o += w * x);
        }
        if let Some(f) = &self.frequency {
            let mut p: Vec<Complex64> = weights[s..s + m]
                .iter()
                .map(|&w| Complex64::new(w, 0.0))
                .collect();
            spectral::inverse_plan(m).process(&mut p);
            let gain = f.values.reconstruction_gain();
            for (slot, &k) in f.values.kept_indices().iter().enumerate() {
                let pk = p[k];
                let bins = &f.values.bins()[slot * d..(slot + 1) * d];
                for (o, b) in out.iter_mut().zip(bins) {
                    *o += gain * (b.re * pk.re - b.im * pk.im);
                }
            }
        }
        for (w, v) in weights[s + m..].iter().zip(&self.recent_values) {
            out.iter_mut().zip(v).for_each(|(o, x)| *o += w * x);
        }
        Ok(out)
    }

    /// Attention over the explicitly assembled cache.
    pub fn attend(&self, query: &[f64]) -> Result<Vec<f64>> {
        let kv = self.assemble();
        attend_rows(
            query,
            kv.keys.as_slice(),
            kv.values.as_slice(),
            self.head_dim,
        )
    }

    pub fn memory_report(&self) -> MemoryReport {
        let d = self.head_dim;
        let kept = self.kept_bins();
        let period = self.period();
        let sink_reals = 2 * self.sink_len() * d;
        let recent_reals = 2 * self.recent_len() * d;
        let frequency_reals = 2 * 2 * kept * d;
        let compressed_reals = sink_reals + recent_reals + frequency_reals;
        let uncompressed_reals = 2 * self.total * d;
        MemoryReport {
            tokens: self.total,
            head_dim: d,
            period,
            kept_bins: kept,
            sink_reals,
            recent_reals,
            frequency_reals,
            compressed_reals,
            uncompressed_reals,
            ratio: if uncompressed_reals == 0 {
                0.0
            } else {
                compressed_reals as f64 / uncompressed_reals as f64
            },
            middle_ratio: if period == 0 {
                0.0
            } else {
                2.0 * kept as f64 / period as f64
            },
        }
    }
}

/// Writes one layer (all heads) in the `FKVC` snapshot layout: header, sink
/// block, recent block (f32), then one IWDF blob per head for K and for V.
///
/// Header: magic, u32 version, u32 S, u32 R, u32 M, u32 d, u32 heads,
/// u64 N_cur, then u32 headroom, u32 sink rows, u32 recent rows.
pub fn write_layer<W: Write>(w: &mut W, heads: &[CompressedKv]) -> Result<()> {
    let first = heads
        .first()
        .ok_or_else(|| invalid("a snapshot layer needs at least one head"))?;
    let consistent = heads.iter().all(|h| {
        h.geometry == first.geometry
            && h.head_dim == first.head_dim
            && h.total == first.total
            && h.sink_len() == first.sink_len()
            && h.recent_len() == first.recent_len()
            && h.period() == first.period()
    });
    if !consistent {
        return Err(invalid("heads of one layer must share geometry and length"));
    }
    let g = first.geometry;
    w.write_all(SNAPSHOT_MAGIC)?;
    put_u32(w, SNAPSHOT_VERSION)?;
    put_len(w, g.sink, "FKVC snapshot")?;
    put_len(w, g.recent, "FKVC snapshot")?;
    put_len(w, first.period(), "FKVC snapshot")?;
    put_len(w, first.head_dim, "FKVC snapshot")?;
    put_len(w, heads.len(), "FKVC snapshot")?;
    put_u64(w, first.total as u64)?;
    put_len(w, g.headroom, "FKVC snapshot")?;
    put_len(w, first.sink_len(), "FKVC snapshot")?;
    put_len(w, first.recent_len(), "FKVC snapshot")?;
    let put_rows = |w: &mut W, rows: &mut dyn Iterator<Item = &Vec<f64>>| -> Result<()> {
        for row in rows {
            for &v in row {
                put_f32(w, v as f32)?;
            }
        }
        Ok(())
    };
    for h in heads {
        put_rows(w, &mut h.sink_keys.iter())?;
        put_rows(w, &mut h.sink_values.iter())?;
    }
    for h in heads {
        put_rows(w, &mut h.recent_keys.iter())?;
        put_rows(w, &mut h.recent_values.iter())?;
    }
    for h in heads {
        if let Some(f) = &h.frequency {
            f.keys.write_to(w)?;
            f.values.write_to(w)?;
        }
    }
    Ok(())
}

pub fn read_layer<R: Read>(r: &mut R) -> Result<Vec<CompressedKv>> {
    expect_magic(r, SNAPSHOT_MAGIC, "FKVC snapshot")?;
    let version = get_u32(r)?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Format {
            what: "FKVC snapshot",
            reason: format!("unsupported version {version}"),
        });
    }
    let sink = get_u32(r)? as usize;
    let recent = get_u32(r)? as usize;
    let period = get_u32(r)? as usize;
    let d = get_u32(r)? as usize;
    let head_count = get_u32(r)? as usize;
    let total = get_u64(r)? as usize;
    let headroom = get_u32(r)? as usize;
    let sink_rows = get_u32(r)? as usize;
    let recent_rows = get_u32(r)? as usize;
    let geometry = CacheGeometry {
        sink,
        recent,
        headroom,
    };
    let get_rows = |r: &mut R, n: usize| -> Result<Vec<Vec<f64>>> {
        (0..n)
            .map(|_| (0..d).map(|_| get_f32(r).map(f64::from)).collect())
            .collect()
    };
    let mut heads: Vec<CompressedKv> = (0..head_count)
        .map(|_| CompressedKv::empty(geometry, d))
        .collect();
    for h in heads.iter_mut() {
        h.sink_keys = get_rows(r, sink_rows)?;
        h.sink_values = get_rows(r, sink_rows)?;
    }
    for h in heads.iter_mut() {
        h.recent_keys = get_rows(r, recent_rows)?.into();
        h.recent_values = get_rows(r, recent_rows)?.into();
    }
    for h in heads.iter_mut() {
        h.total = total;
        if period > 0 {
            let keys = IwdftState::read_from(r, d)?;
            let values = IwdftState::read_from(r, d)?;
            if keys.period() != period || values.period() != period {
                return Err(Error::Format {
                    what: "FKVC snapshot",
                    reason: "state period differs from header".into(),
                });
            }
            h.frequency = Some(FrequencySegment { keys, values });
        }
        if h.sink_len() + h.tokens_folded() as usize + h.recent_len() != total {
            return Err(Error::Format {
                what: "FKVC snapshot",
                reason: "token count does not add up".into(),
            });
        }
    }
    Ok(heads)
}

/// One `layer_NNNN.fkvc` file per layer inside `dir`.
pub fn save_snapshot(dir: &Path, layers: &[Vec<CompressedKv>]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (l, heads) in layers.iter().enumerate() {
        let mut w = BufWriter::new(fs::File::create(dir.join(format!("layer_{l:04}.fkvc")))?);
        write_layer(&mut w, heads)?;
        w.flush()?;
    }
    Ok(())
}

pub fn load_snapshot(dir: &Path) -> Result<Vec<Vec<CompressedKv>>> {
    let mut layers = Vec::new();
    loop {
        let path = dir.join(format!("layer_{:04}.fkvc", layers.len()));
        if !path.exists() {
            break;
        }
        let mut r = BufReader::new(fs::File::open(path)?);
        layers.push(read_layer(&mut r)?);
    }
    Ok(layers)
}
