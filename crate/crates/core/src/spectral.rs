//! Forward and inverse DFT along the token axis of a single KV channel.
//!
//! Conventions: `X[k] = Σ_n x[n]·e^{-j2πkn/M}` for the forward transform and
//! `x[n] = (1/M)·Σ_k X[k]·e^{+j2πkn/M}` for the inverse. The fast path is
//! backed by `rustfft`, which handles every length (prime lengths go through
//! Rader/Bluestein), so there is no separate fallback for awkward sizes.

use std::cell::RefCell;
use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn forward_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

pub(crate) fn inverse_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Largest imaginary residue tolerated (in debug builds) when a real signal
/// is read back from a conjugate-symmetric spectrum.
pub const IMAG_RESIDUE_LIMIT: f64 = 1e-6;

/// A non-empty sequence of finite real samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal(Vec<f64>);

impl TimeSignal {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        validate_signal(&samples)?;
        Ok(Self(samples))
    }

    pub fn samples(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn validate_signal(samples: &[f64]) -> Result<()> {
    if samples.is_empty() {
        return Err(invalid("signal must contain at least one sample"));
    }
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(invalid(format!("sample {i} is not finite")));
    }
    Ok(())
}

/// Dense spectrum of period `M = bins.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(bins: Vec<Complex64>) -> Result<Self> {
        if bins.is_empty() {
            return Err(invalid("spectrum period must be positive"));
        }
        Ok(Self { bins })
    }

    pub fn zeros(period: usize) -> Result<Self> {
        Self::new(vec![Complex64::new(0.0, 0.0); period])
    }

    pub fn period(&self) -> usize {
        self.bins.len()
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn bins_mut(&mut self) -> &mut [Complex64] {
        &mut self.bins
    }

    pub fn into_bins(self) -> Vec<Complex64> {
        self.bins
    }

    /// `bins[k] == conj(bins[(M - k) mod M])` within `tol`.
    pub fn is_conjugate_symmetric(&self, tol: f64) -> bool {
        let m = self.period();
        (0..m).all(|k| (self.bins[k] - self.bins[(m - k) % m].conj()).norm() <= tol)
    }

    /// Keep only `indices`; all other bins are dropped.
    pub fn sparsify(&self, indices: &[usize]) -> Result<SparseSpectrum> {
        let coefficients = indices
            .iter()
            .map(|&k| {
                self.bins
                    .get(k)
                    .copied()
                    .ok_or_else(|| invalid(format!("bin {k} outside period {}", self.period())))
            })
            .collect::<Result<Vec<_>>>()?;
        SparseSpectrum::new(self.period(), indices.to_vec(), coefficients)
    }
}

/// Spectrum that stores only a subset of bins; the rest are implicitly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSpectrum {
    period: usize,
    kept: Vec<usize>,
    coefficients: Vec<Complex64>,
}

impl SparseSpectrum {
    pub fn new(period: usize, kept: Vec<usize>, coefficients: Vec<Complex64>) -> Result<Self> {
        if period == 0 {
            return Err(invalid("spectrum period must be positive"));
        }
        validate_kept(period, &kept)?;
        if coefficients.len() != kept.len() {
            return Err(invalid(format!(
                "{} coefficients for {} kept indices",
                coefficients.len(),
                kept.len()
            )));
        }
        Ok(Self {
            period,
            kept,
            coefficients,
        })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn kept_indices(&self) -> &[usize] {
        &self.kept
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn densify(&self) -> Spectrum {
        let mut bins = vec![Complex64::new(0.0, 0.0); self.period];
        for (&k, &c) in self.kept.iter().zip(&self.coefficients) {
            bins[k] = c;
        }
        Spectrum { bins }
    }
}

/// Kept-bin lists must be strictly increasing and inside the period.
pub(crate) fn validate_kept(period: usize, kept: &[usize]) -> Result<()> {
    if let Some(&last) = kept.last() {
        if last >= period {
            return Err(invalid(format!(
                "kept index {last} outside period {period}"
            )));
        }
    }
    if kept.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("kept indices must be strictly increasing"));
    }
    Ok(())
}

/// Forward DFT via FFT.
pub fn dft_forward(signal: &[f64]) -> Result<Spectrum> {
    validate_signal(signal)?;
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    forward_plan(buf.len()).process(&mut buf);
    Ok(Spectrum { bins: buf })
}

/// Forward DFT by direct O(M²) summation, with twiddles taken from an exact
/// index table so no phase error accumulates.
pub fn dft_direct(signal: &[f64]) -> Result<Spectrum> {
    validate_signal(signal)?;
    let m = signal.len();
    let table = twiddle_table(m, -1.0);
    let bins = (0..m)
        .map(|k| {
            signal
                .iter()
                .enumerate()
                .map(|(n, &x)| table[(k * n) % m] * x)
                .sum()
        })
        .collect();
    Ok(Spectrum { bins })
}

/// Inverse DFT returning the complex samples (including any imaginary part).
pub fn idft_complex(spectrum: &Spectrum) -> Vec<Complex64> {
    let m = spectrum.period();
    let mut buf = spectrum.bins.clone();
    inverse_plan(m).process(&mut buf);
    let scale = 1.0 / m as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

/// Inverse DFT keeping the real part. The imaginary residue is dropped; a
/// pruned spectrum is generally not conjugate-symmetric, so it is expected.
pub fn idft_full(spectrum: &Spectrum) -> Vec<f64> {
    idft_complex(spectrum).into_iter().map(|v| v.re).collect()
}

/// Like [`idft_full`] but asserts (debug builds) that the input was
/// conjugate-symmetric enough for the imaginary residue to be negligible.
pub fn idft_real(spectrum: &Spectrum) -> Vec<f64> {
    idft_complex(spectrum)
        .into_iter()
        .map(|v| {
            debug_assert!(
                v.im.abs() <= IMAG_RESIDUE_LIMIT,
                "imaginary residue {}",
                v.im
            );
            v.re
        })
        .collect()
}

/// Inverse DFT touching only the stored bins: `O(kept · n_out)`.
pub fn sparse_idft(spectrum: &SparseSpectrum, n_out: usize) -> Result<Vec<f64>> {
    if n_out != spectrum.period {
        return Err(invalid(format!(
            "reconstruction length {n_out} differs from period {}",
            spectrum.period
        )));
    }
    let m = spectrum.period;
    let table = twiddle_table(m, 1.0);
    let scale = 1.0 / m as f64;
    let mut out = vec![0.0; m];
    for (&k, &c) in spectrum.kept.iter().zip(&spectrum.coefficients) {
        let mut idx = 0usize;
        for o in out.iter_mut() {
            let w = table[idx];
            *o += c.re * w.re - c.im * w.im;
            idx += k;
            if idx >= m {
                idx -= m;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// `Σ_k |X[k]|²`.
pub fn spectral_energy(spectrum: &Spectrum) -> f64 {
    spectrum.bins.iter().map(|b| b.norm_sqr()).sum()
}

/// `e^{sign·j2πm/M}` for `m in 0..M`.
pub(crate) fn twiddle_table(m: usize, sign: f64) -> Vec<Complex64> {
    (0..m)
        .map(|i| Complex64::from_polar(1.0, sign * TAU * i as f64 / m as f64))
        .collect()
}
