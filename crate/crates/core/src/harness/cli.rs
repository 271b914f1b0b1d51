//! Argument parsing for `faedkv <ablate|generate|needle|bench|compare>`.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::iwdft::NormalizationMode;

use super::{ablate, bench, compare, generate, needle, HarnessResult, RunConfig, EXIT_OK};

#[derive(Debug, Parser)]
#[command(
    name = "faedkv",
    version,
    about = "Frequency-domain KV-cache compression harness"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Chunk ablation, greedy masks and a perplexity sweep over C
    Ablate,
    /// Greedy decoding with a compressed cache against a full-cache run
    Generate,
    /// Needle retrieval accuracy per depth
    Needle,
    /// Component latency benchmarks
    Bench,
    /// Middle-segment reconstruction fidelity
    Compare,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// key=value settings file; flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// FKVW weights file (default: seeded random model)
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub prompt: Option<PathBuf>,
    /// Synthetic prompt and corpus length when no file is given
    #[arg(long, global = true)]
    pub prompt_len: Option<usize>,
    #[arg(long = "sink", global = true)]
    pub sink: Option<usize>,
    #[arg(long = "recent", global = true)]
    pub recent: Option<usize>,
    /// Generated tokens absorbed before aging out (default: recent)
    #[arg(long, global = true)]
    pub headroom: Option<usize>,
    #[arg(long = "chunks", global = true)]
    pub chunks: Option<usize>,
    #[arg(long = "ratio", global = true)]
    pub ratio: Option<f64>,
    /// exact | approx
    #[arg(long, global = true)]
    pub mode: Option<NormalizationMode>,
    #[arg(long, global = true)]
    pub mask: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    /// Comma-separated context lengths
    #[arg(long, global = true, value_delimiter = ',')]
    pub lengths: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Comma-separated chunk counts for the ablation sweep
    #[arg(long, global = true, value_delimiter = ',')]
    pub sweep: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub head_dim: Option<usize>,
    #[arg(long, global = true)]
    pub layers: Option<usize>,
    #[arg(long, global = true)]
    pub heads: Option<usize>,
    #[arg(long, global = true)]
    pub d_model: Option<usize>,
    #[arg(long, global = true)]
    pub vocab: Option<usize>,
    #[arg(long, global = true)]
    pub ffn_hidden: Option<usize>,
}

impl Flags {
    /// Config file first, then every flag that was given.
    pub fn resolve(&self) -> HarnessResult<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        macro_rules! take {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        take!(
            sink => c.sink,
            recent => c.recent,
            chunks => c.chunks,
            ratio => c.ratio,
            mode => c.mode,
            seed => c.seed,
            prompt_len => c.prompt_len,
            layers => c.model_config.layers,
            heads => c.model_config.heads,
            d_model => c.model_config.d_model,
            vocab => c.model_config.vocab,
            ffn_hidden => c.model_config.ffn_hidden,
        );
        macro_rules! take_opt {
            ($($field:ident),* $(,)?) => {
                $(if self.$field.is_some() { c.$field = self.$field.clone(); })*
            };
        }
        take_opt!(
            model, corpus, prompt, mask, out, headroom, reps, lengths, steps, sweep, head_dim
        );
        c.validate()?;
        Ok(c)
    }
}

pub fn dispatch(command: Command, cfg: &RunConfig) -> HarnessResult<()> {
    match command {
        Command::Ablate => ablate::run(cfg),
        Command::Generate => generate::run(cfg),
        Command::Needle => needle::run(cfg),
        Command::Bench => bench::run(cfg),
        Command::Compare => compare::run(cfg),
    }
}

/// Parse, run, report errors on stderr and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                super::EXIT_CONFIG
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    let result = cli
        .flags
        .resolve()
        .and_then(|cfg| dispatch(cli.command, &cfg));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("faedkv: {e}");
            e.exit_code()
        }
    }
}
