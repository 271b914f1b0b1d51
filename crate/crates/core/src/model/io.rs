//! `FKVW` weight files.
//!
//! Layout (little-endian): magic, u32 version, six u32 config fields
//! (layers, heads, d_model, vocab, max_context, ffn_hidden), u32 tensor
//! count, then each tensor as u32 name length, UTF-8 name, u32 rank, u32
//! dims, and row-major f32 data. Tensors appear in a fixed order:
//! `embedding`, `unembedding`, then per layer `wq wk wv wo` and, when the
//! feed-forward block is enabled, `ffn_in ffn_out`.

use std::io::{Read, Write};

use crate::binio::{expect_magic, get_f32, get_u32, put_f32, put_len, put_u32};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

use super::{FeedForward, LayerWeights, ModelConfig, ToyModel, Weights};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"FKVW";
pub const WEIGHTS_VERSION: u32 = 1;

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "weight file",
        reason: reason.into(),
    }
}

fn tensor_names(config: &ModelConfig) -> Vec<String> {
    let mut names = vec!["embedding".to_string(), "unembedding".to_string()];
    for l in 0..config.layers {
        for t in ["wq", "wk", "wv", "wo"] {
            names.push(format!("layers.{l}.{t}"));
        }
        if config.ffn_hidden > 0 {
            names.push(format!("layers.{l}.ffn_in"));
            names.push(format!("layers.{l}.ffn_out"));
        }
    }
    names
}

fn put_tensor<W: Write>(w: &mut W, name: &str, m: &Matrix) -> Result<()> {
    put_len(w, name.len(), "weight file")?;
    w.write_all(name.as_bytes())?;
    put_u32(w, 2)?;
    put_len(w, m.rows(), "weight file")?;
    put_len(w, m.cols(), "weight file")?;
    for &v in m.as_slice() {
        put_f32(w, v as f32)?;
    }
    Ok(())
}

fn get_tensor<R: Read>(r: &mut R, expected: &str) -> Result<Matrix> {
    let len = get_u32(r)? as usize;
    if len > 4096 {
        return Err(format_err(format!(
            "tensor name length {len} is implausible"
        )));
    }
    let mut name = vec![0u8; len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| format_err("tensor name is not UTF-8"))?;
    if name != expected {
        return Err(format_err(format!(
            "expected tensor {expected}, found {name}"
        )));
    }
    let rank = get_u32(r)?;
    if rank != 2 {
        return Err(format_err(format!(
            "tensor {name} has rank {rank}, expected 2"
        )));
    }
    let rows = get_u32(r)? as usize;
    let cols = get_u32(r)? as usize;
    let mut data = Vec::with_capacity(rows.saturating_mul(cols).min(1 << 24));
    for _ in 0..rows * cols {
        data.push(get_f32(r)? as f64);
    }
    Matrix::from_vec(rows, cols, data)
}

pub fn write_weights<W: Write>(w: &mut W, model: &ToyModel) -> Result<()> {
    let c = model.config();
    w.write_all(WEIGHTS_MAGIC)?;
    put_u32(w, WEIGHTS_VERSION)?;
    for v in [
        c.layers,
        c.heads,
        c.d_model,
        c.vocab,
        c.max_context,
        c.ffn_hidden,
    ] {
        put_len(w, v, "weight file")?;
    }
    let names = tensor_names(c);
    put_len(w, names.len(), "weight file")?;
    let wt = model.weights();
    let mut tensors: Vec<&Matrix> = vec![&wt.embedding, &wt.unembedding];
    for lw in &wt.layers {
        tensors.extend([&lw.wq, &lw.wk, &lw.wv, &lw.wo]);
        if let Some(f) = &lw.ffn {
            tensors.extend([&f.w_in, &f.w_out]);
        }
    }
    for (name, m) in names.iter().zip(tensors) {
        put_tensor(w, name, m)?;
    }
    Ok(())
}

pub fn read_weights<R: Read>(r: &mut R) -> Result<ToyModel> {
    expect_magic(r, WEIGHTS_MAGIC, "weight file")?;
    let version = get_u32(r)?;
    if version != WEIGHTS_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let mut f = [0usize; 6];
    for v in &mut f {
        *v = get_u32(r)? as usize;
    }
    let config = ModelConfig {
        layers: f[0],
        heads: f[1],
        d_model: f[2],
        vocab: f[3],
        max_context: f[4],
        ffn_hidden: f[5],
    };
    config.validate()?;
    let names = tensor_names(&config);
    let count = get_u32(r)? as usize;
    if count != names.len() {
        return Err(format_err(format!(
            "{count} tensors, expected {}",
            names.len()
        )));
    }
    let mut it = names.iter();
    let mut next = |r: &mut R| get_tensor(r, it.next().expect("counted"));
    let embedding = next(r)?;
    let unembedding = next(r)?;
    let mut layers = Vec::with_capacity(config.layers);
    for _ in 0..config.layers {
        let wq = next(r)?;
        let wk = next(r)?;
        let wv = next(r)?;
        let wo = next(r)?;
        let ffn = if config.ffn_hidden > 0 {
            Some(FeedForward {
                w_in: next(r)?,
                w_out: next(r)?,
            })
        } else {
            None
        };
        layers.push(LayerWeights {
            wq,
            wk,
            wv,
            wo,
            ffn,
        });
    }
    ToyModel::new(
        config,
        Weights {
            embedding,
            unembedding,
            layers,
        },
    )
}
