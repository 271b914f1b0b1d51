//! Folding a stream into a fixed set of frequency bins with the
//! infinite-window recursion, in both normalization modes.
//!
//! ```text
//! cargo run --example iwdft_streaming
//! ```

use faedkv::{IwdftState, Matrix, NormalizationMode, Result};

fn main() -> Result<()> {
    let m = 16;
    let prompt: Vec<f64> = (0..m).map(|n| (n as f64 * 0.4).sin()).collect();
    let segment = Matrix::from_vec(m, 1, prompt)?;

    for mode in [NormalizationMode::Exact, NormalizationMode::PaperApprox] {
        let mut state = IwdftState::from_segment(&segment, (0..m).collect(), mode)?;
        let mut peak = 0.0f64;
        for t in 0..10_000 {
            let x = ((t % 7) as f64 - 3.0) / 3.0;
            peak = peak.max(x.abs());
            state.update_scalar(x)?;
        }
        let dc = state.coefficient(0, 0);
        println!(
            "{:<6} folded {:>5} tokens, max |S| {:.4}, dc {:+.4}, gain {:.1}",
            mode.name(),
            state.tokens_folded(),
            state.max_magnitude(),
            dc.re,
            state.reconstruction_gain()
        );
        if mode == NormalizationMode::Exact {
            println!(
                "       magnitude bound holds: {}",
                state.magnitude_bound_check(peak)?
            );
        }
    }

    let mut sparse = IwdftState::zeros(m, vec![0, 1, 15], 1, NormalizationMode::Exact)?;
    for t in 0..40 {
        sparse.update_scalar((t as f64 * 0.3).cos())?;
    }
    let bytes = sparse.to_bytes();
    let restored = IwdftState::from_bytes(&bytes, 1)?;
    println!(
        "sparse state with 3 bins: {} bytes, restored equal: {}",
        bytes.len(),
        restored == sparse
    );
    Ok(())
}
