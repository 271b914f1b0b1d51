//! A single head's compressed cache: prefill a prompt, keep decoding past
//! the recent window, and compare attention against the uncompressed cache.
//!
//! ```text
//! cargo run --release --example compressed_decode
//! ```

use faedkv::{partition, CacheGeometry, CompressedKv, Matrix, NormalizationMode, Result};

fn row(t: usize, d: usize, phase: f64) -> Vec<f64> {
    (0..d)
        .map(|c| ((t as f64) * 0.05 * (c + 1) as f64 + phase).sin())
        .collect()
}

fn main() -> Result<()> {
    let (n, d) = (400, 16);
    let keys = Matrix::from_rows(&(0..n).map(|t| row(t, d, 0.0)).collect::<Vec<_>>(), d)?;
    let values = Matrix::from_rows(&(0..n).map(|t| row(t, d, 1.0)).collect::<Vec<_>>(), d)?;
    let geometry = CacheGeometry::new(10, 50);
    let m = geometry
        .middle_len(n)
        .expect("prompt longer than sink + recent");
    let kept = partition(m, 22)?.bins_of(&[0, 1, 2, 20, 21])?;

    let mut cache = CompressedKv::prefill_compress(
        &keys,
        &values,
        &kept,
        geometry,
        NormalizationMode::PaperApprox,
    )?;
    let mut full_k: Vec<Vec<f64>> = (0..n).map(|t| keys.row(t).to_vec()).collect();
    let mut full_v: Vec<Vec<f64>> = (0..n).map(|t| values.row(t).to_vec()).collect();

    for t in n..n + 120 {
        let (k, v) = (row(t, d, 0.0), row(t, d, 1.0));
        cache.append_token(&k, &v)?;
        full_k.push(k);
        full_v.push(v);
        if (t - n) % 40 == 39 {
            let q = row(t, d, 0.5);
            let compressed = cache.attend_fused(&q)?;
            let kv = faedkv::AssembledKv {
                keys: Matrix::from_rows(&full_k, d)?,
                values: Matrix::from_rows(&full_v, d)?,
            };
            let reference = faedkv::model::attention::attend(&q, &kv)?;
            let gap = compressed
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            println!(
                "t={:>3} folded {:>3} recent {:>3} attention gap {gap:.4}",
                t + 1,
                cache.tokens_folded(),
                cache.recent_len()
            );
        }
    }
    let mem = cache.memory_report();
    println!(
        "{} of {} bins kept, memory ratio {:.3}, middle ratio {:.3}",
        mem.kept_bins, mem.period, mem.ratio, mem.middle_ratio
    );
    Ok(())
}
