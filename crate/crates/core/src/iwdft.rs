//! Infinite-window DFT: a fixed set of `M`-periodic frequency bins that
//! absorbs one time-domain sample per update without ever evicting one.
//!
//! Each tracked bin follows
//!
//! ```text
//! S'[k] = R_k · ( a_N · S[k] + x / N ),     R_k = e^{+j2πk/M},  N = tokens_folded + 1
//! ```
//!
//! with `a_N = (N-1)/N` in [`NormalizationMode::Exact`] and `a_N = 1` in
//! [`NormalizationMode::PaperApprox`]. In exact mode the state is the running
//! average of all absorbed samples, each rotated to its position relative to
//! the newest one:
//!
//! ```text
//! S_t[k] = (1/t) · Σ_{n=1..t} x_n · R_k^{t-n+1}
//! ```
//!
//! After absorbing exactly `M` samples from zero this equals `DFT(x)/M`, which
//! is why prefill hands its segment over as `DFT/M` with a count of `M`.
//!
//! One state carries every channel of a (layer, head) pair; coefficients are
//! stored bin-major in memory and channel-major on disk.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::binio::*;
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::spectral::{self, validate_kept, SparseSpectrum};

pub const STATE_MAGIC: &[u8; 4] = b"IWDF";
pub const STATE_VERSION: u32 = 1;

/// Relative slack on the exact-mode magnitude bound.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Full `(N-1)/N` decay of the previous state.
    Exact,
    /// `(N-1)/N` replaced by 1.
    PaperApprox,
}

impl NormalizationMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::PaperApprox => "approx",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Self::Exact => 0,
            Self::PaperApprox => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Self::Exact),
            1 => Ok(Self::PaperApprox),
            other => Err(Error::Format {
                what: "IWDF state",
                reason: format!("unknown mode tag {other}"),
            }),
        }
    }
}

impl std::str::FromStr for NormalizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(Self::Exact),
            "approx" | "paper" | "paper_approx" | "paperapprox" => Ok(Self::PaperApprox),
            other => Err(invalid(format!(
                "unknown mode '{other}', expected exact|approx"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IwdftState {
    period: usize,
    kept: Vec<usize>,
    channels: usize,
    /// `bins[slot * channels + channel]`
    bins: Vec<Complex64>,
    tokens_folded: u64,
    mode: NormalizationMode,
    rotors: Vec<Complex64>,
}

impl IwdftState {
    /// All-zero state over `kept` bins with no samples absorbed.
    pub fn zeros(
        period: usize,
        kept: Vec<usize>,
        channels: usize,
        mode: NormalizationMode,
    ) -> Result<Self> {
        let n = kept.len() * channels;
        Self::from_parts(
            period,
            kept,
            channels,
            vec![Complex64::new(0.0, 0.0); n],
            0,
            mode,
        )
    }

    /// Single-channel state seeded from a sparse spectrum.
    pub fn from_sparse(
        spectrum: &SparseSpectrum,
        initial_count: u64,
        mode: NormalizationMode,
    ) -> Self {
        Self::from_parts(
            spectrum.period(),
            spectrum.kept_indices().to_vec(),
            1,
            spectrum.coefficients().to_vec(),
            initial_count,
            mode,
        )
        .expect("sparse spectrum already validated")
    }

    /// `bins` are bin-major: `bins[slot * channels + channel]`.
    pub fn from_parts(
        period: usize,
        kept: Vec<usize>,
        channels: usize,
        bins: Vec<Complex64>,
        tokens_folded: u64,
        mode: NormalizationMode,
    ) -> Result<Self> {
        if period == 0 {
            return Err(invalid("IWDFT period must be positive"));
        }
        if channels == 0 {
            return Err(invalid("IWDFT state needs at least one channel"));
        }
        validate_kept(period, &kept)?;
        if bins.len() != kept.len() * channels {
            return Err(invalid(format!(
                "{} coefficients for {} bins x {channels} channels",
                bins.len(),
                kept.len()
            )));
        }
        let rotors = kept
            .iter()
            .map(|&k| Complex64::from_polar(1.0, TAU * k as f64 / period as f64))
            .collect();
        Ok(Self {
            period,
            kept,
            channels,
            bins,
            tokens_folded,
            mode,
            rotors,
        })
    }

    /// Prefill handoff: DFT each column of `segment` (`M × d`) along the token
    /// axis, keep `kept`, divide by `M`, and record `M` absorbed tokens.
    pub fn from_segment(
        segment: &Matrix,
        kept: Vec<usize>,
        mode: NormalizationMode,
    ) -> Result<Self> {
        let (m, d) = segment.shape();
        if m == 0 {
            return Err(invalid("cannot transform an empty segment"));
        }
        validate_kept(m, &kept)?;
        let scale = 1.0 / m as f64;
        let mut bins = vec![Complex64::new(0.0, 0.0); kept.len() * d];
        for c in 0..d {
            let spectrum = spectral::dft_forward(&segment.column(c))?;
            for (slot, &k) in kept.iter().enumerate() {
                bins[slot * d + c] = spectrum.bins()[k] * scale;
            }
        }
        Self::from_parts(m, kept, d, bins, m as u64, mode)
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn kept_indices(&self) -> &[usize] {
        &self.kept
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn tokens_folded(&self) -> u64 {
        self.tokens_folded
    }

    pub fn mode(&self) -> NormalizationMode {
        self.mode
    }

    /// Bin-major coefficients.
    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    pub fn coefficient(&self, slot: usize, channel: usize) -> Complex64 {
        self.bins[slot * self.channels + channel]
    }

    /// One channel as a sparse spectrum (state units, no gain applied).
    pub fn channel_spectrum(&self, channel: usize) -> SparseSpectrum {
        let coeffs = (0..self.kept.len())
            .map(|slot| self.coefficient(slot, channel))
            .collect();
        SparseSpectrum::new(self.period, self.kept.clone(), coeffs).expect("state invariants")
    }

    pub fn max_magnitude(&self) -> f64 {
        self.bins.iter().map(|b| b.norm()).fold(0.0, f64::max)
    }

    /// Gain that turns the averaged state back into a sum before the `1/M`
    /// of the inverse transform.
    pub fn reconstruction_gain(&self) -> f64 {
        self.tokens_folded as f64 / self.period as f64
    }

    /// Absorb one sample per channel.
    pub fn update(&mut self, sample: &[f64]) -> Result<()> {
        if sample.len() != self.channels {
            return Err(invalid(format!(
                "sample has {} channels, state tracks {}",
                sample.len(),
                self.channels
            )));
        }
        if let Some(c) = sample.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("sample channel {c} is not finite")));
        }
        let n = (self.tokens_folded + 1) as f64;
        let inv_n = 1.0 / n;
        let decay = match self.mode {
            NormalizationMode::Exact => (n - 1.0) / n,
            NormalizationMode::PaperApprox => 1.0,
        };
        let d = self.channels;
        for (slot, rotor) in self.rotors.iter().enumerate() {
            let row = &mut self.bins[slot * d..(slot + 1) * d];
            for (b, &x) in row.iter_mut().zip(sample) {
                *b = rotor * (*b * decay + x * inv_n);
            }
        }
        self.tokens_folded += 1;
        Ok(())
    }

    pub fn update_scalar(&mut self, sample: f64) -> Result<()> {
        self.update(&[sample])
    }

    /// Exact mode only: whether every bin is within the largest absolute
    /// input seen so far.
    pub fn magnitude_bound_check(&self, history_max: f64) -> Result<bool> {
        if self.mode != NormalizationMode::Exact {
            return Err(Error::UnsupportedMode("paper-approx"));
        }
        let limit = history_max * (1.0 + BOUND_SLACK);
        Ok(self.bins.iter().all(|b| b.norm() <= limit))
    }

    /// Time-domain view of the state: an `M × channels` matrix computed with
    /// a sparse inverse DFT over the tracked bins and the
    /// [`reconstruction_gain`](Self::reconstruction_gain).
    pub fn synthesize(&self) -> Matrix {
        let m = self.period;
        let d = self.channels;
        let mut out = Matrix::zeros(m, d);
        if self.tokens_folded == 0 || self.kept.is_empty() {
            return out;
        }
        let table = spectral::twiddle_table(m, 1.0);
        let gain = self.reconstruction_gain();
        let mut phase = vec![0usize; self.kept.len()];
        for n in 0..m {
            let row = out.row_mut(n);
            for (slot, (&k, idx)) in self.kept.iter().zip(phase.iter_mut()).enumerate() {
                let w = table[*idx];
                let bins = &self.bins[slot * d..(slot + 1) * d];
                for (o, b) in row.iter_mut().zip(bins) {
                    *o += b.re * w.re - b.im * w.im;
                }
                *idx += k;
                if *idx >= m {
                    *idx -= m;
                }
            }
            row.iter_mut().for_each(|v| *v *= gain);
        }
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(STATE_MAGIC)?;
        put_u32(w, STATE_VERSION)?;
        put_len(w, self.period, "IWDF state")?;
        put_u64(w, self.tokens_folded)?;
        put_u8(w, self.mode.tag())?;
        put_len(w, self.kept.len(), "IWDF state")?;
        for &k in &self.kept {
            put_len(w, k, "IWDF state")?;
        }
        for c in 0..self.channels {
            for slot in 0..self.kept.len() {
                let b = self.coefficient(slot, c);
                put_f64(w, b.re)?;
                put_f64(w, b.im)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(25 + self.kept.len() * (4 + 16 * self.channels));
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    /// The on-disk header has no channel count; the container supplies it.
    pub fn read_from<R: Read>(r: &mut R, channels: usize) -> Result<Self> {
        expect_magic(r, STATE_MAGIC, "IWDF state")?;
        let version = get_u32(r)?;
        if version != STATE_VERSION {
            return Err(Error::Format {
                what: "IWDF state",
                reason: format!("unsupported version {version}"),
            });
        }
        let period = get_u32(r)? as usize;
        let tokens_folded = get_u64(r)?;
        let mode = NormalizationMode::from_tag(get_u8(r)?)?;
        let kept_count = get_u32(r)? as usize;
        let kept = (0..kept_count)
            .map(|_| get_u32(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut bins = vec![Complex64::new(0.0, 0.0); kept_count * channels];
        for c in 0..channels {
            for slot in 0..kept_count {
                let re = get_f64(r)?;
                let im = get_f64(r)?;
                bins[slot * channels + c] = Complex64::new(re, im);
            }
        }
        Self::from_parts(period, kept, channels, bins, tokens_folded, mode).map_err(|e| {
            Error::Format {
                what: "IWDF state",
                reason: e.to_string(),
            }
        })
    }

    pub fn from_bytes(bytes: &[u8], channels: usize) -> Result<Self> {
        let mut cursor = bytes;
        let state = Self::read_from(&mut cursor, channels)?;
        if !cursor.is_empty() {
            return Err(Error::Format {
                what: "IWDF state",
                reason: format!("{} trailing bytes", cursor.len()),
            });
        }
        Ok(state)
    }
}
