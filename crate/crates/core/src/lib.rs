//! Frequency-domain KV-cache compression.
//!
//! Each attention head keeps its first `S` tokens and last `R` tokens
//! verbatim. The middle of the prompt is moved to the frequency domain along
//! the token axis, pruned to the chunks of bins a per-layer ablation found
//! important, and extended during decoding by an infinite-window recursive
//! DFT that folds every aged-out token into the same fixed set of bins.
//!
//! ```
//! use faedkv::{CacheGeometry, CompressedKv, KeptBins, Matrix, NormalizationMode};
//!
//! let n = 80;
//! let keys = Matrix::from_vec(n, 2, (0..2 * n).map(|i| (i as f64).sin()).collect()).unwrap();
//! let geometry = CacheGeometry::new(4, 16);
//! let m = geometry.middle_len(n).unwrap();
//! let cache = CompressedKv::prefill_compress(
//!     &keys, &keys, &KeptBins::all(m), geometry, NormalizationMode::PaperApprox,
//! ).unwrap();
//! assert!(cache.assemble().keys.max_abs_diff(&keys) < 1e-12);
//! ```

pub mod ablation;
mod binio;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod iwdft;
pub mod kv_cache;
pub mod linalg;
pub mod model;
pub mod needle;
pub mod spectral;

pub use ablation::{greedy_select, partition, run_ablation, ImportanceTable, KeptBins, PruneMask};
pub use error::{Error, Result};
pub use iwdft::{IwdftState, NormalizationMode};
pub use kv_cache::{AssembledKv, CacheGeometry, CompressedKv, MemoryReport};
pub use linalg::Matrix;
pub use model::{CacheMode, CompressionConfig, ModelConfig, PrunedLayers, ToyModel};
pub use spectral::{dft_forward, idft_real, sparse_idft, SparseSpectrum, Spectrum};
