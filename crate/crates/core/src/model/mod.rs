//! A small decoder-only attention stack used to drive the cache the way a
//! host LLM would.
//!
//! Row-vector convention throughout: `q = x·W^Q`, `k = x·W^K`, `v = x·W^V`,
//! with head `h` owning columns `[h·d, (h+1)·d)`. Positions are encoded with
//! additive sinusoidal embeddings before the first layer, so the cache stores
//! post-projection vectors and never sees position indices.

pub mod attention;
mod io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use io::{read_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

use crate::ablation::{partition, prune_columns, PruneMask};
use crate::error::{invalid, Result};
use crate::iwdft::NormalizationMode;
use crate::kv_cache::{CacheGeometry, CompressedKv};
use crate::linalg::{dot, Matrix};
use attention::{attend_rows, log_softmax, softmax_in_place};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub vocab: usize,
    pub max_context: usize,
    /// Hidden width of the feed-forward block; 0 disables it.
    pub ffn_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            d_model: 32,
            vocab: 64,
            max_context: 16384,
            ffn_hidden: 0,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0
            || self.heads == 0
            || self.d_model == 0
            || self.vocab == 0
            || self.max_context == 0
        {
            return Err(invalid("model dimensions must be positive"));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(invalid(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub w_in: Matrix,
    pub w_out: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ffn: Option<FeedForward>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// `vocab × d_model`
    pub embedding: Matrix,
    /// `d_model × vocab`
    pub unembedding: Matrix,
    pub layers: Vec<LayerWeights>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    config: ModelConfig,
    weights: Weights,
}

/// Per-head query, key and value vectors for one token.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadProjections {
    pub q: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Uncompressed cache of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct FullKv {
    head_dim: usize,
    keys: Vec<f64>,
    values: Vec<f64>,
}

impl FullKv {
    pub fn new(head_dim: usize) -> Self {
        Self {
            head_dim,
            keys: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, key: &[f64], value: &[f64]) {
        self.keys.extend_from_slice(key);
        self.values.extend_from_slice(value);
    }

    pub fn len(&self) -> usize {
        self.keys.len() / self.head_dim
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> Matrix {
        Matrix::from_vec(self.len(), self.head_dim, self.keys.clone()).expect("consistent")
    }

    pub fn values(&self) -> Matrix {
        Matrix::from_vec(self.len(), self.head_dim, self.values.clone()).expect("consistent")
    }

    pub fn attend(&self, query: &[f64]) -> Result<Vec<f64>> {
        attend_rows(query, &self.keys, &self.values, self.head_dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum HeadCache {
    Full(FullKv),
    Compressed(CompressedKv),
}

impl HeadCache {
    pub fn append(&mut self, key: &[f64], value: &[f64]) -> Result<()> {
        match self {
            Self::Full(c) => {
                c.push(key, value);
                Ok(())
            }
            Self::Compressed(c) => c.append_token(key, value),
        }
    }

    /// Compressed heads attend over the assembled cache.
    pub fn attend(&self, query: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Full(c) => c.attend(query),
            Self::Compressed(c) => c.attend(query),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Full(c) => c.len(),
            Self::Compressed(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-sequence decode state: one cache per (layer, head).
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeState {
    position: usize,
    layers: Vec<Vec<HeadCache>>,
}

impl DecodeState {
    pub fn position(&self) -> usize {
        self.position
    }

    pub fn layers(&self) -> &[Vec<HeadCache>] {
        &self.layers
    }

    pub fn head(&self, layer: usize, head: usize) -> &HeadCache {
        &self.layers[layer][head]
    }

    /// Compressed caches by layer, for snapshotting.
    pub fn compressed_layers(&self) -> Option<Vec<Vec<CompressedKv>>> {
        self.layers
            .iter()
            .map(|heads| {
                heads
                    .iter()
                    .map(|h| match h {
                        HeadCache::Compressed(c) => Some(c.clone()),
                        HeadCache::Full(_) => None,
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionConfig {
    pub mask: PruneMask,
    pub geometry: CacheGeometry,
    pub mode: NormalizationMode,
}

/// Spectral substitution applied to a teacher-forced forward pass: for each
/// listed layer, the middle segment of K and V is reduced to the retained
/// chunks. `None` leaves a layer untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedLayers {
    pub chunks: usize,
    pub geometry: CacheGeometry,
    pub layers: Vec<Option<Vec<usize>>>,
}

impl PrunedLayers {
    pub fn new(chunks: usize, geometry: CacheGeometry, layers: Vec<Option<Vec<usize>>>) -> Self {
        Self {
            chunks,
            geometry,
            layers,
        }
    }

    pub fn from_mask(mask: &PruneMask, geometry: CacheGeometry) -> Self {
        Self::new(
            mask.chunks(),
            geometry,
            mask.layers().iter().map(|row| Some(row.clone())).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CacheMode {
    Full,
    /// Prefill compresses each head; decoding appends and ages tokens out.
    Compressed(CompressionConfig),
    /// Forward-pass substitution only (used by perplexity and ablation).
    Pruned(PrunedLayers),
}

/// Greedy generation: the chosen tokens and the logits each was chosen from.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<u32>,
    pub logits: Vec<Vec<f64>>,
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Additive sinusoidal position embedding.
pub fn positional_encoding(position: usize, width: usize) -> Vec<f64> {
    (0..width)
        .map(|i| {
            let pair = (i / 2) as f64;
            let angle = position as f64 / 10000f64.powf(2.0 * pair / width as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

fn relu_ffn(x: &[f64], ffn: &FeedForward) -> Result<Vec<f64>> {
    let mut hidden = ffn.w_in.left_mul(x)?;
    hidden.iter_mut().for_each(|v| *v = v.max(0.0));
    ffn.w_out.left_mul(&hidden)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let normal = Normal::new(0.0, std).expect("positive std");
    // f32-representable so weight files round-trip exactly
    let data = (0..rows * cols)
        .map(|_| normal.sample(rng) as f32 as f64)
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

impl ToyModel {
    pub fn new(config: ModelConfig, weights: Weights) -> Result<Self> {
        config.validate()?;
        let dm = config.d_model;
        let check = |m: &Matrix, shape: (usize, usize), name: &str| -> Result<()> {
            if m.shape() != shape {
                return Err(invalid(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    m.shape()
                )));
            }
            if !m.is_finite() {
                return Err(invalid(format!("{name} has non-finite entries")));
            }
            Ok(())
        };
        check(&weights.embedding, (config.vocab, dm), "embedding")?;
        check(&weights.unembedding, (dm, config.vocab), "unembedding")?;
        if weights.layers.len() != config.layers {
            return Err(invalid("layer count differs from config"));
        }
        for (l, lw) in weights.layers.iter().enumerate() {
            for (m, name) in [
                (&lw.wq, "wq"),
                (&lw.wk, "wk"),
                (&lw.wv, "wv"),
                (&lw.wo, "wo"),
            ] {
                check(m, (dm, dm), &format!("layer {l} {name}"))?;
            }
            match (&lw.ffn, config.ffn_hidden) {
                (None, 0) => {}
                (Some(f), h) if h > 0 => {
                    check(&f.w_in, (dm, h), &format!("layer {l} ffn_in"))?;
                    check(&f.w_out, (h, dm), &format!("layer {l} ffn_out"))?;
                }
                _ => {
                    return Err(invalid(format!(
                        "layer {l}: feed-forward presence differs from config"
                    )))
                }
            }
        }
        Ok(Self { config, weights })
    }

    /// Seeded Gaussian initialization with `1/√fan_in` scaling.
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dm = config.d_model;
        let proj_std = 1.0 / (dm as f64).sqrt();
        let embedding = random_matrix(&mut rng, config.vocab, dm, 1.0);
        let unembedding = random_matrix(&mut rng, dm, config.vocab, proj_std);
        let layers = (0..config.layers)
            .map(|_| LayerWeights {
                wq: random_matrix(&mut rng, dm, dm, proj_std),
                wk: random_matrix(&mut rng, dm, dm, proj_std),
                wv: random_matrix(&mut rng, dm, dm, proj_std),
                wo: random_matrix(&mut rng, dm, dm, proj_std),
                ffn: (config.ffn_hidden > 0).then(|| FeedForward {
                    w_in: random_matrix(&mut rng, dm, config.ffn_hidden, proj_std),
                    w_out: random_matrix(
                        &mut rng,
                        config.ffn_hidden,
                        dm,
                        1.0 / (config.ffn_hidden as f64).sqrt(),
                    ),
                }),
            })
            .collect();
        Self::new(
            config,
            Weights {
                embedding,
                unembedding,
                layers,
            },
        )
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Weights {
        &mut self.weights
    }

    fn check_token(&self, token: u32) -> Result<()> {
        if token as usize >= self.config.vocab {
            return Err(invalid(format!(
                "token id {token} outside vocabulary of {}",
                self.config.vocab
            )));
        }
        Ok(())
    }

    pub fn embed(&self, token: u32, position: usize) -> Result<Vec<f64>> {
        self.check_token(token)?;
        let pe = positional_encoding(position, self.config.d_model);
        Ok(self
            .weights
            .embedding
            .row(token as usize)
            .iter()
            .zip(pe)
            .map(|(e, p)| e + p)
            .collect())
    }

    /// Project a hidden vector with layer `layer`'s `W^Q, W^K, W^V`, split
    /// per head.
    pub fn project_qkv(&self, x: &[f64], layer: usize) -> Result<HeadProjections> {
        let lw = self
            .weights
            .layers
            .get(layer)
            .ok_or_else(|| invalid(format!("no layer {layer}")))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("hidden vector is not finite"));
        }
        let d = self.config.head_dim();
        let split = |full: Vec<f64>| {
            full.chunks_exact(d)
                .map(<[f64]>::to_vec)
                .collect::<Vec<_>>()
        };
        Ok(HeadProjections {
            q: split(lw.wq.left_mul(x)?),
            k: split(lw.wk.left_mul(x)?),
            v: split(lw.wv.left_mul(x)?),
        })
    }

    pub fn logits(&self, hidden: &[f64]) -> Result<Vec<f64>> {
        self.weights.unembedding.left_mul(hidden)
    }

    pub fn new_state(&self) -> DecodeState {
        let d = self.config.head_dim();
        DecodeState {
            position: 0,
            layers: (0..self.config.layers)
                .map(|_| {
                    (0..self.config.heads)
                        .map(|_| HeadCache::Full(FullKv::new(d)))
                        .collect()
                })
                .collect(),
        }
    }

    /// One autoregressive step: embed, and per layer project, append to the
    /// cache, attend, project out and (optionally) feed forward.
    pub fn decode_step(&self, state: &mut DecodeState, token: u32) -> Result<Vec<f64>> {
        if state.layers.len() != self.config.layers {
            return Err(invalid("decode state does not match model depth"));
        }
        let mut x = self.embed(token, state.position)?;
        for (l, lw) in self.weights.layers.iter().enumerate() {
            let proj = self.project_qkv(&x, l)?;
            let mut attn = Vec::with_capacity(self.config.d_model);
            for (h, cache) in state.layers[l].iter_mut().enumerate() {
                cache.append(&proj.k[h], &proj.v[h])?;
                attn.extend(cache.attend(&proj.q[h])?);
            }
            let out = lw.wo.left_mul(&attn)?;
            x.iter_mut().zip(out).for_each(|(a, b)| *a += b);
            if let Some(ffn) = &lw.ffn {
                let f = relu_ffn(&x, ffn)?;
                x.iter_mut().zip(f).for_each(|(a, b)| *a += b);
            }
        }
        state.position += 1;
        self.logits(&x)
    }

    /// Run the prompt with full attention, then convert each head's cache
    /// according to `mode`. Returns the state and the last prompt logits.
    pub fn prefill(&self, tokens: &[u32], mode: &CacheMode) -> Result<(DecodeState, Vec<f64>)> {
        if tokens.is_empty() {
            return Err(invalid("prompt is empty"));
        }
        let mut state = self.new_state();
        let mut logits = Vec::new();
        for &t in tokens {
            logits = self.decode_step(&mut state, t)?;
        }
        match mode {
            CacheMode::Full => {}
            CacheMode::Compressed(cfg) => {
                if cfg.mask.layer_count() != self.config.layers {
                    return Err(invalid(format!(
                        "mask has {} layers, model has {}",
                        cfg.mask.layer_count(),
                        self.config.layers
                    )));
                }
                for (l, heads) in state.layers.iter_mut().enumerate() {
                    for head in heads.iter_mut() {
                        let HeadCache::Full(full) = head else {
                            unreachable!()
                        };
                        let compressed = CompressedKv::from_prefill(
                            &full.keys(),
                            &full.values(),
                            |m| cfg.mask.kept_bins(l, m),
                            cfg.geometry,
                            cfg.mode,
                        )?;
                        *head = HeadCache::Compressed(compressed);
                    }
                }
            }
            CacheMode::Pruned(_) => {
                return Err(invalid(
                    "pruned substitution applies to forward passes, not decoding",
                ));
            }
        }
        Ok((state, logits))
    }

    /// Prefill, then `steps` greedy decode steps.
    pub fn generate(&self, prompt: &[u32], steps: usize, mode: &CacheMode) -> Result<Generation> {
        let (mut state, mut logits) = self.prefill(prompt, mode)?;
        let mut out = Generation {
            tokens: Vec::with_capacity(steps),
            logits: Vec::with_capacity(steps),
        };
        for _ in 0..steps {
            let next = argmax(&logits) as u32;
            out.tokens.push(next);
            out.logits.push(logits);
            logits = self.decode_step(&mut state, next)?;
        }
        Ok(out)
    }

    /// Teacher-forced logits for every position, recomputing attention from
    /// scratch with a causal mask. `pruned` substitutes the middle segment of
    /// the listed layers' K and V before attention.
    pub fn forward(&self, tokens: &[u32], pruned: Option<&PrunedLayers>) -> Result<Vec<Vec<f64>>> {
        let n = tokens.len();
        if n > self.config.max_context {
            return Err(invalid(format!(
                "sequence of {n} tokens exceeds max context {}",
                self.config.max_context
            )));
        }
        let dm = self.config.d_model;
        let d = self.config.head_dim();
        let rows = tokens
            .iter()
            .enumerate()
            .map(|(p, &t)| self.embed(t, p))
            .collect::<Result<Vec<_>>>()?;
        let mut hidden = Matrix::from_rows(&rows, dm)?;
        for (l, lw) in self.weights.layers.iter().enumerate() {
            let q = hidden.matmul(&lw.wq)?;
            let mut k = hidden.matmul(&lw.wk)?;
            let mut v = hidden.matmul(&lw.wv)?;
            if let Some(p) = pruned {
                if let Some(Some(chunks)) = p.layers.get(l) {
                    if let Some(m) = p.geometry.middle_len(n) {
                        let kept = partition(m, p.chunks)?.bins_of(chunks)?;
                        let (s, e) = (p.geometry.sink, n - p.geometry.recent);
                        let k_mid = prune_columns(&k.slice_rows(s, e), &kept)?;
                        let v_mid = prune_columns(&v.slice_rows(s, e), &kept)?;
                        for r in 0..m {
                            k.row_mut(s + r).copy_from_slice(k_mid.row(r));
                            v.row_mut(s + r).copy_from_slice(v_mid.row(r));
                        }
                    }
                }
            }
            let scale = 1.0 / (d as f64).sqrt();
            let mut attn = Matrix::zeros(n, dm);
            let mut weights = Vec::with_capacity(n);
            for h in 0..self.config.heads {
                let cols = h * d..(h + 1) * d;
                for t in 0..n {
                    let qt = &q.row(t)[cols.clone()];
                    weights.clear();
                    weights.extend((0..=t).map(|j| dot(qt, &k.row(j)[cols.clone()]) * scale));
                    softmax_in_place(&mut weights);
                    let out = &mut attn.row_mut(t)[cols.clone()];
                    for (j, w) in weights.iter().enumerate() {
                        out.iter_mut()
                            .zip(&v.row(j)[cols.clone()])
                            .for_each(|(o, x)| *o += w * x);
                    }
                }
            }
            let proj = attn.matmul(&lw.wo)?;
            for t in 0..n {
                let row = hidden.row_mut(t);
                row.iter_mut().zip(proj.row(t)).for_each(|(a, b)| *a += b);
                if let Some(ffn) = &lw.ffn {
                    let f = relu_ffn(row, ffn)?;
                    row.iter_mut().zip(f).for_each(|(a, b)| *a += b);
                }
            }
        }
        (0..n).map(|t| self.logits(hidden.row(t))).collect()
    }

    /// `exp(mean next-token cross-entropy)` over the sequence.
    pub fn perplexity(&self, mode: &CacheMode, tokens: &[u32]) -> Result<f64> {
        if tokens.len() < 2 {
            return Err(invalid("perplexity needs at least 2 tokens"));
        }
        let pruned = match mode {
            CacheMode::Full => None,
            CacheMode::Pruned(p) => Some(p.clone()),
            CacheMode::Compressed(cfg) => Some(PrunedLayers::from_mask(&cfg.mask, cfg.geometry)),
        };
        let logits = self.forward(&tokens[..tokens.len() - 1], pruned.as_ref())?;
        let nll: f64 = logits
            .iter()
            .zip(&tokens[1..])
            .map(|(row, &next)| -log_softmax(row)[next as usize])
            .sum();
        Ok((nll / logits.len() as f64).exp())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_weights(&mut w, self)?;
        std::io::Write::flush(&mut w)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        read_weights(&mut r)
    }
}
