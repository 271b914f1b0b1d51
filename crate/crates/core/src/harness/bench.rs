//! `faedkv bench`: component latencies on a single synthetic head.
//!
//! Phases:
//! - `prefill`: DFT and pruning of the middle segment.
//! - `decode_reconstruct`: per step, one fold into the frequency state and
//!   an explicit sparse IDFT of the middle segment.
//! - `decode_step`: per step, one fold and attention through the fused
//!   spectral path.
//! - `full_attend`: per step, one append and attention over an uncompressed
//!   cache of the same length.
//!
//! Decode phases run with zero headroom so that every step folds a token.
//! CSV columns: `phase,context_len,r,median_ns,iqr_ns`.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ablation::{partition, retained_count, KeptBins};
use crate::error::Result;
use crate::iwdft::NormalizationMode;
use crate::kv_cache::{CacheGeometry, CompressedKv};
use crate::linalg::Matrix;
use crate::model::FullKv;

use super::{emit, HarnessResult, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Prefill,
    DecodeReconstruct,
    DecodeStep,
    FullAttend,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Self::Prefill => "prefill",
            Self::DecodeReconstruct => "decode_reconstruct",
            Self::DecodeStep => "decode_step",
            Self::FullAttend => "full_attend",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub phase: Phase,
    pub context_len: usize,
    pub ratio: f64,
    pub median_ns: f64,
    pub iqr_ns: f64,
}

/// Synthetic K/V for one head plus everything a timed phase needs.
#[derive(Debug, Clone)]
pub struct BenchSetup {
    pub keys: Matrix,
    pub values: Matrix,
    pub tail: Vec<Vec<f64>>,
    pub query: Vec<f64>,
    pub geometry: CacheGeometry,
    pub kept: KeptBins,
    pub mode: NormalizationMode,
}

/// `count` chunks spread evenly over `[0, chunks)`.
pub fn spread_chunks(count: usize, chunks: usize) -> Vec<usize> {
    (0..count).map(|i| i * chunks / count.max(1)).collect()
}

impl BenchSetup {
    /// `kept_chunks` of `chunks` retained; `steps` extra tokens for decoding.
    pub fn new(
        context_len: usize,
        head_dim: usize,
        chunks: usize,
        kept_chunks: usize,
        steps: usize,
        geometry: CacheGeometry,
        seed: u64,
    ) -> Result<Self> {
        let geometry = geometry.with_headroom(0);
        let m = geometry
            .middle_len(context_len)
            .ok_or(crate::error::Error::ContextTooShort {
                len: context_len,
                needed: geometry.sink + geometry.recent,
            })?;
        let kept = partition(m, chunks)?.bins_of(&spread_chunks(kept_chunks, chunks))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        let keys = Matrix::from_vec(context_len, head_dim, gauss(context_len * head_dim))?;
        let values = Matrix::from_vec(context_len, head_dim, gauss(context_len * head_dim))?;
        let tail = (0..steps).map(|_| gauss(head_dim)).collect();
        let query = gauss(head_dim);
        Ok(Self {
            keys,
            values,
            tail,
            query,
            geometry,
            kept,
            mode: NormalizationMode::PaperApprox,
        })
    }

    fn compress(&self) -> Result<CompressedKv> {
        CompressedKv::prefill_compress(
            &self.keys,
            &self.values,
            &self.kept,
            self.geometry,
            self.mode,
        )
    }

    /// One timing sample in nanoseconds. Decode phases report the mean per
    /// step over all `tail` tokens.
    pub fn sample(&self, phase: Phase) -> Result<f64> {
        let steps = self.tail.len().max(1) as f64;
        match phase {
            Phase::Prefill => {
                let t = Instant::now();
                black_box(self.compress()?);
                Ok(t.elapsed().as_nanos() as f64)
            }
            Phase::DecodeReconstruct => {
                let mut cache = self.compress()?;
                let t = Instant::now();
                for tok in &self.tail {
                    cache.append_token(tok, tok)?;
                    black_box(cache.reconstruct());
                }
                Ok(t.elapsed().as_nanos() as f64 / steps)
            }
            Phase::DecodeStep => {
                let mut cache = self.compress()?;
                let t = Instant::now();
                for tok in &self.tail {
                    cache.append_token(tok, tok)?;
                    black_box(cache.attend_fused(&self.query)?);
                }
                Ok(t.elapsed().as_nanos() as f64 / steps)
            }
            Phase::FullAttend => {
                let mut cache = FullKv::new(self.keys.cols());
                for r in 0..self.keys.rows() {
                    cache.push(self.keys.row(r), self.values.row(r));
                }
                let t = Instant::now();
                for tok in &self.tail {
                    cache.push(tok, tok);
                    black_box(cache.attend(&self.query)?);
                }
                Ok(t.elapsed().as_nanos() as f64 / steps)
            }
        }
    }

    /// Median and interquartile range over `reps` samples.
    pub fn measure(&self, phase: Phase, reps: usize) -> Result<(f64, f64)> {
        let mut samples = (0..reps)
            .map(|_| self.sample(phase))
            .collect::<Result<Vec<f64>>>()?;
        samples.sort_by(f64::total_cmp);
        Ok((
            quantile(&samples, 0.5),
            quantile(&samples, 0.75) - quantile(&samples, 0.25),
        ))
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("phase,context_len,r,median_ns,iqr_ns\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{:.0},{:.0}",
            r.phase.name(),
            r.context_len,
            r.ratio,
            r.median_ns,
            r.iqr_ns
        )
        .expect("string write");
    }
    s
}

pub fn compute(cfg: &RunConfig) -> HarnessResult<Vec<BenchRow>> {
    let lengths = cfg
        .lengths
        .clone()
        .unwrap_or_else(|| vec![512, 1024, 2048, 4096]);
    let reps = cfg.reps.unwrap_or(5);
    let steps = cfg.steps.unwrap_or(10);
    let head_dim = cfg.head_dim.unwrap_or(128);
    let kept_chunks = retained_count(cfg.ratio, cfg.chunks).max(1);
    let mut phases = vec![Phase::Prefill];
    if steps > 0 {
        phases.extend([
            Phase::DecodeReconstruct,
            Phase::DecodeStep,
            Phase::FullAttend,
        ]);
    }
    let mut rows = Vec::new();
    for &n in &lengths {
        let setup = BenchSetup::new(
            n,
            head_dim,
            cfg.chunks,
            kept_chunks,
            steps,
            cfg.geometry(),
            cfg.seed,
        )?;
        for &phase in &phases {
            let (median_ns, iqr_ns) = setup.measure(phase, reps)?;
            rows.push(BenchRow {
                phase,
                context_len: n,
                ratio: cfg.ratio,
                median_ns,
                iqr_ns,
            });
        }
    }
    Ok(rows)
}

pub fn run(cfg: &RunConfig) -> HarnessResult<()> {
    let rows = compute(cfg)?;
    emit(cfg.out.as_deref(), &bench_csv(&rows))
}
