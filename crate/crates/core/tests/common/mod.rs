//! Brute-force reference implementations shared by the integration tests.
//! None of them touch the library's transform code.

#![allow(dead_code)]

use std::f64::consts::TAU;

use faedkv::{Matrix, NormalizationMode};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_signal(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, random_signal(rng, rows * cols)).unwrap()
}

/// `e^{sign·j2π·(p mod m)/m}` with the exponent reduced exactly.
pub fn unit(p: i64, m: usize, sign: f64) -> Complex64 {
    let r = p.rem_euclid(m as i64) as f64;
    Complex64::from_polar(1.0, sign * TAU * r / m as f64)
}

/// Nested-loop forward DFT, `X[k] = Σ x[n] e^{-j2πkn/M}`.
pub fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let m = x.len();
    (0..m)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(n, &v)| v * unit((k * n) as i64, m, -1.0))
                .sum()
        })
        .collect()
}

/// Nested-loop inverse DFT, `x[n] = (1/M) Σ X[k] e^{+j2πkn/M}`.
pub fn naive_idft(spectrum: &[Complex64]) -> Vec<Complex64> {
    let m = spectrum.len();
    (0..m)
        .map(|n| {
            spectrum
                .iter()
                .enumerate()
                .map(|(k, &c)| c * unit((k * n) as i64, m, 1.0))
                .sum::<Complex64>()
                / m as f64
        })
        .collect()
}

/// Unrolled infinite-window state after absorbing `samples` from zero:
/// exact mode `(1/t) Σ x_n R^{t-n+1}`, approximate mode `Σ x_n R^{t-n+1} / n`
/// with `R = e^{+j2πk/M}` and `n` counted from 1.
pub fn iwdft_oracle(samples: &[f64], m: usize, k: usize, mode: NormalizationMode) -> Complex64 {
    let t = samples.len();
    let sum: Complex64 = samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let n = i + 1;
            let rot = unit((k * (t - n + 1)) as i64, m, 1.0);
            match mode {
                NormalizationMode::Exact => x * rot,
                NormalizationMode::PaperApprox => x * rot / n as f64,
            }
        })
        .sum();
    match mode {
        NormalizationMode::Exact if t > 0 => sum / t as f64,
        _ => sum,
    }
}

/// Time-domain signal a state represents: `(t/M) Σ_k S[k] e^{+j2πkn/M}`,
/// real part, over the kept bins only.
pub fn synthesize(bins: &[(usize, Complex64)], m: usize, tokens: u64) -> Vec<f64> {
    let gain = tokens as f64 / m as f64;
    (0..m)
        .map(|n| {
            gain * bins
                .iter()
                .map(|&(k, c)| (c * unit((k * n) as i64, m, 1.0)).re)
                .sum::<f64>()
        })
        .collect()
}

/// Sliding-window DFT over the last `m` samples, updated recursively with
/// `X' = (X + x_new − x_old) · e^{+j2πk/M}`; phases are relative to the
/// newest sample, like the infinite-window state.
pub fn sliding_dft(samples: &[f64], m: usize) -> Vec<Complex64> {
    let mut bins = vec![Complex64::new(0.0, 0.0); m];
    for (t, &x) in samples.iter().enumerate() {
        let old = if t >= m { samples[t - m] } else { 0.0 };
        for (k, b) in bins.iter_mut().enumerate() {
            *b = (*b + x - old) * unit(k as i64, m, 1.0);
        }
    }
    bins
}

/// Component of `x` carried by the bins outside `kept`.
pub fn removed_part(x: &[f64], kept: &[usize]) -> Vec<f64> {
    let mut spectrum = naive_dft(x);
    for &k in kept {
        spectrum[k] = Complex64::new(0.0, 0.0);
    }
    naive_idft(&spectrum).into_iter().map(|c| c.re).collect()
}

/// `q·k/√d` attention written out from the formula.
pub fn reference_attention(q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Vec<f64> {
    let d = q.len() as f64;
    let scores: Vec<f64> = keys
        .iter()
        .map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut out = vec![0.0; values[0].len()];
    for (w, v) in weights.iter().zip(values) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w / z * x;
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
