//! Subcommand implementations behind the `faedkv` binary.
//!
//! Every command takes a resolved [`RunConfig`]. Settings come from an
//! optional `key=value` config file and are overridden by command-line
//! flags; nothing is read from the environment.

pub mod ablate;
pub mod bench;
pub mod cli;
pub mod compare;
pub mod generate;
pub mod needle;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::ablation::{greedy_select, run_ablation, PruneMask};
use crate::corpus::{read_sequences, synthetic_corpus};
use crate::error::Error;
use crate::iwdft::NormalizationMode;
use crate::kv_cache::CacheGeometry;
use crate::model::{ModelConfig, ToyModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug)]
pub enum HarnessError {
    Config(String),
    Runtime(Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(msg) => write!(f, "config error: {msg}"),
            Self::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<Error> for HarnessError {
    fn from(e: Error) -> Self {
        Self::Runtime(e)
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.into())
    }
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

/// Fully resolved settings for one invocation. Unset optional values fall
/// back to per-command defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: Option<PathBuf>,
    pub model_config: ModelConfig,
    pub seed: u64,
    pub sink: usize,
    pub recent: usize,
    pub headroom: Option<usize>,
    pub chunks: usize,
    pub ratio: f64,
    pub mode: NormalizationMode,
    pub corpus: Option<PathBuf>,
    pub prompt: Option<PathBuf>,
    pub prompt_len: usize,
    pub mask: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub reps: Option<usize>,
    pub lengths: Option<Vec<usize>>,
    pub steps: Option<usize>,
    pub sweep: Option<Vec<usize>>,
    pub head_dim: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: None,
            model_config: ModelConfig {
                layers: 2,
                heads: 2,
                d_model: 32,
                vocab: 64,
                max_context: 16384,
                ffn_hidden: 0,
            },
            seed: 0,
            sink: 10,
            recent: 50,
            headroom: None,
            chunks: 22,
            ratio: 1.0,
            mode: NormalizationMode::PaperApprox,
            corpus: None,
            prompt: None,
            prompt_len: 256,
            mask: None,
            out: None,
            reps: None,
            lengths: None,
            steps: None,
            sweep: None,
            head_dim: None,
        }
    }
}

fn parse_list(value: &str) -> HarnessResult<Vec<usize>> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| config_err(format!("bad list entry {s:?}: {e}")))
        })
        .collect()
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> HarnessResult<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| config_err(format!("{key}: cannot parse {value:?}: {e}")))
}

impl RunConfig {
    /// Apply one `key=value` setting. Keys match the long flag names.
    pub fn set(&mut self, key: &str, value: &str) -> HarnessResult<()> {
        let v = value.trim();
        match key.trim() {
            "model" => self.model = Some(PathBuf::from(v)),
            "seed" => self.seed = parse_num(key, v)?,
            "sink" => self.sink = parse_num(key, v)?,
            "recent" => self.recent = parse_num(key, v)?,
            "headroom" => self.headroom = Some(parse_num(key, v)?),
            "chunks" => self.chunks = parse_num(key, v)?,
            "ratio" => self.ratio = parse_num(key, v)?,
            "mode" => self.mode = v.parse().map_err(|e: Error| config_err(e.to_string()))?,
            "corpus" => self.corpus = Some(PathBuf::from(v)),
            "prompt" => self.prompt = Some(PathBuf::from(v)),
            "prompt-len" => self.prompt_len = parse_num(key, v)?,
            "mask" => self.mask = Some(PathBuf::from(v)),
            "out" => self.out = Some(PathBuf::from(v)),
            "reps" => self.reps = Some(parse_num(key, v)?),
            "lengths" => self.lengths = Some(parse_list(v)?),
            "steps" => self.steps = Some(parse_num(key, v)?),
            "sweep" => self.sweep = Some(parse_list(v)?),
            "head-dim" => self.head_dim = Some(parse_num(key, v)?),
            "layers" => self.model_config.layers = parse_num(key, v)?,
            "heads" => self.model_config.heads = parse_num(key, v)?,
            "d-model" => self.model_config.d_model = parse_num(key, v)?,
            "vocab" => self.model_config.vocab = parse_num(key, v)?,
            "ffn-hidden" => self.model_config.ffn_hidden = parse_num(key, v)?,
            other => return Err(config_err(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    /// Parse `key=value` lines; `#` starts a comment.
    pub fn apply_file_contents(&mut self, text: &str) -> HarnessResult<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("config line {}: expected key=value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> HarnessResult<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_file_contents(&text)
    }

    pub fn validate(&self) -> HarnessResult<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(config_err(format!("ratio {} outside (0, 1]", self.ratio)));
        }
        if self.chunks == 0 {
            return Err(config_err("chunks must be at least 1"));
        }
        if self.reps == Some(0) {
            return Err(config_err("reps must be at least 1"));
        }
        if self.head_dim == Some(0) {
            return Err(config_err("head-dim must be positive"));
        }
        if matches!(&self.lengths, Some(l) if l.is_empty() || l.contains(&0)) {
            return Err(config_err("lengths must be positive"));
        }
        if matches!(&self.sweep, Some(s) if s.is_empty() || s.contains(&0)) {
            return Err(config_err("sweep values must be positive"));
        }
        if self.model.is_none() {
            self.model_config
                .validate()
                .map_err(|e| config_err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn geometry(&self) -> CacheGeometry {
        let g = CacheGeometry::new(self.sink, self.recent);
        match self.headroom {
            Some(h) => g.with_headroom(h),
            None => g,
        }
    }

    /// The weights file, or a seeded random model.
    pub fn load_model(&self) -> HarnessResult<ToyModel> {
        Ok(match &self.model {
            Some(path) => ToyModel::load(path)?,
            None => ToyModel::random(self.model_config, self.seed)?,
        })
    }

    /// The corpus file, or four seeded synthetic sequences of `prompt_len`.
    pub fn load_corpus(&self, model: &ToyModel) -> HarnessResult<Vec<Vec<u32>>> {
        Ok(match &self.corpus {
            Some(path) => read_sequences(path)?,
            None => synthetic_corpus(
                model.config().vocab,
                4,
                self.prompt_len,
                self.seed.wrapping_add(1),
            ),
        })
    }

    /// First sequence of the prompt file, or a seeded synthetic prompt.
    pub fn load_prompt(&self, model: &ToyModel) -> HarnessResult<Vec<u32>> {
        Ok(match &self.prompt {
            Some(path) => read_sequences(path)?.into_iter().next().unwrap_or_default(),
            None => synthetic_corpus(
                model.config().vocab,
                1,
                self.prompt_len,
                self.seed.wrapping_add(2),
            )
            .remove(0),
        })
    }

    /// The mask file; otherwise everything at `ratio = 1`, or a fresh
    /// ablation over the corpus followed by greedy selection.
    pub fn resolve_mask(&self, model: &ToyModel) -> HarnessResult<PruneMask> {
        let layers = model.config().layers;
        let mask = if let Some(path) = &self.mask {
            PruneMask::from_json(&fs::read_to_string(path)?)?
        } else if self.ratio == 1.0 {
            PruneMask::full(layers, self.chunks)
        } else {
            let corpus = self.load_corpus(model)?;
            let table = run_ablation(model, &corpus, self.chunks, self.geometry())?;
            greedy_select(&table, self.ratio)?
        };
        if mask.layer_count() != layers {
            return Err(config_err(format!(
                "mask has {} layers, model has {layers}",
                mask.layer_count()
            )));
        }
        Ok(mask)
    }
}

/// Write `contents` to `path`, or to stdout when no path is given.
pub(crate) fn emit(path: Option<&Path>, contents: &str) -> HarnessResult<()> {
    match path {
        Some(p) => fs::write(p, contents)?,
        None => print!("{contents}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_and_defaults() {
        let mut c = RunConfig::default();
        assert_eq!((c.sink, c.recent, c.chunks), (10, 50, 22));
        assert_eq!(c.mode, NormalizationMode::PaperApprox);
        c.apply_file_contents(
            "# comment\nsink = 4\nratio=0.5 # trailing\nmode=exact\nlengths=512,1024\n",
        )
        .unwrap();
        assert_eq!(c.sink, 4);
        assert_eq!(c.ratio, 0.5);
        assert_eq!(c.mode, NormalizationMode::Exact);
        assert_eq!(c.lengths, Some(vec![512, 1024]));
        assert!(c.apply_file_contents("bogus=1").is_err());
        assert!(c.apply_file_contents("sink").is_err());
    }

    #[test]
    fn validation_catches_bad_ratio() {
        let mut c = RunConfig::default();
        c.ratio = 0.0;
        assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
        c.ratio = 1.2;
        assert!(c.validate().is_err());
        c.ratio = 0.25;
        assert!(c.validate().is_ok());
    }
}
