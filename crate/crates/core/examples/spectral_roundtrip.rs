//! Forward DFT of a token-axis signal, chunked pruning, and sparse
//! reconstruction from the surviving bins.
//!
//! ```text
//! cargo run --example spectral_roundtrip
//! ```

use faedkv::spectral::{dft_forward, idft_full, sparse_idft, spectral_energy};
use faedkv::{partition, Result};

fn main() -> Result<()> {
    // slow drift plus a fast wiggle, length 97 (prime)
    let x: Vec<f64> = (0..97)
        .map(|n| {
            let t = n as f64 / 97.0;
            (2.0 * std::f64::consts::PI * t).sin()
                + 0.2 * (2.0 * std::f64::consts::PI * 31.0 * t).cos()
        })
        .collect();

    let spectrum = dft_forward(&x)?;
    let back = idft_full(&spectrum);
    let err = x
        .iter()
        .zip(&back)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("length {} round-trip max error {err:.2e}", x.len());
    let time_energy: f64 = x.iter().map(|v| v * v).sum::<f64>() * x.len() as f64;
    println!(
        "parseval: {:.6} vs {:.6}",
        spectral_energy(&spectrum),
        time_energy
    );

    let part = partition(x.len(), 8)?;
    for keep in [vec![0], vec![0, 7], vec![0, 2, 5, 7]] {
        let bins = part.bins_of(&keep)?;
        let sparse = spectrum.sparsify(bins.indices())?;
        let approx = sparse_idft(&sparse, x.len())?;
        let rms = (x
            .iter()
            .zip(&approx)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / x.len() as f64)
            .sqrt();
        println!(
            "chunks {keep:?}: {} of {} bins, rms error {rms:.4}",
            bins.len(),
            x.len()
        );
    }
    Ok(())
}
