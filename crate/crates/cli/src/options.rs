// SPDX-License-Identifier: MIT OR Apache-2.0

//! Flags, with a JSON config file as the fallback for every one of them.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "biasheads", version, about = "Find, test and mask bias-carrying attention heads")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gradient of |SEAT| with respect to every head mask.
    BiasScores(Invocation<BiasScoresArgs>),
    /// Attention shift between stereotype and counter-stereotype sentences.
    CounterStereotype(Invocation<CounterArgs>),
    /// |SEAT| and perplexity under head-masking strategies.
    DebiasEval(Invocation<DebiasArgs>),
    /// Pseudo-perplexity (encoders) or perplexity (decoders) of a corpus.
    Pppl(Invocation<PpplArgs>),
    /// Re-render heatmap and histogram from a bias-score CSV.
    ExportFigures(Invocation<ExportArgs>),
}

#[derive(Debug, Args)]
pub struct Invocation<S: Args> {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub specific: S,
    /// JSON file whose keys (flag names) fill in flags not given.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Merges config-file values under command-line values.
pub trait Layered: Sized + for<'de> Deserialize<'de> {
    fn fill_from(&mut self, lower: Self);
}

macro_rules! layered {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl Layered for $ty {
            fn fill_from(&mut self, lower: Self) {
                $(if self.$field.is_none() { self.$field = lower.$field; })*
            }
        }
    };
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct Common {
    /// Tensor archive.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Vocabulary file, one token per line.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// BPE merges file (decoders).
    #[arg(long)]
    pub merges: Option<PathBuf>,
    /// wordpiece, byte-bpe or pretokenized; defaults by architecture.
    #[arg(long)]
    pub tokenizer: Option<String>,
    /// Word-list JSON with attribute_pairs, targets_X, targets_Y.
    #[arg(long)]
    pub wordlists: Option<PathBuf>,
    /// Text corpus, one sentence per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Seed for every random choice; 0 when unset.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Expected architecture: encoder or decoder.
    #[arg(long)]
    pub arch: Option<String>,
    /// Drop list words absent from the corpus instead of failing.
    #[arg(long, num_args = 0, default_missing_value = "true")]
    pub skip_missing: Option<bool>,
    /// f32 or f64 arithmetic.
    #[arg(long)]
    pub precision: Option<String>,
}

layered!(Common { model, vocab, merges, tokenizer, wordlists, corpus, seed, out, arch, skip_missing, precision });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct BiasScoresArgs {
    /// chunked or single-graph.
    #[arg(long)]
    pub mode: Option<String>,
}

layered!(BiasScoresArgs { mode });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct CounterArgs {
    /// Bias-score CSV that defines the biased and regular groups.
    #[arg(long)]
    pub bias_csv: Option<PathBuf>,
    /// Number of sentence pairs.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// sentence-mean or pooled.
    #[arg(long)]
    pub aggregation: Option<String>,
    /// Pair index (0-based) for the attention-edge listing.
    #[arg(long)]
    pub example: Option<usize>,
    /// Head for the attention-edge listing as LAYER-HEAD, 1-based.
    #[arg(long)]
    pub edge_head: Option<String>,
}

layered!(CounterArgs { bias_csv, pairs, aggregation, example, edge_head });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct DebiasArgs {
    #[arg(long)]
    pub bias_csv: Option<PathBuf>,
    /// Comma-separated: top-K, bottom-K, all, random-K, random-all.
    #[arg(long)]
    pub strategies: Option<String>,
    /// Corpus for perplexity; defaults to --corpus.
    #[arg(long)]
    pub lm_corpus: Option<PathBuf>,
}

layered!(DebiasArgs { bias_csv, strategies, lm_corpus });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct PpplArgs {
    /// Bias-score CSV for --strategy.
    #[arg(long)]
    pub bias_csv: Option<PathBuf>,
    /// Masking strategy applied before scoring.
    #[arg(long)]
    pub strategy: Option<String>,
}

layered!(PpplArgs { bias_csv, strategy });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct ExportArgs {
    #[arg(long)]
    pub bias_csv: Option<PathBuf>,
}

layered!(ExportArgs { bias_csv });

fn from_object<T: for<'de> Deserialize<'de>>(object: &Map<String, Value>, keys: &[&str], path: &Path) -> Result<T, Failure> {
    let subset: Map<String, Value> = object
        .iter()
        .filter(|(k, _)| keys.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    serde_json::from_value(Value::Object(subset)).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

const COMMON_KEYS: [&str; 11] = [
    "model",
    "vocab",
    "merges",
    "tokenizer",
    "wordlists",
    "corpus",
    "seed",
    "out",
    "arch",
    "skip-missing",
    "precision",
];

const SPECIFIC_KEYS: [&str; 9] = [
    "mode",
    "bias-csv",
    "pairs",
    "aggregation",
    "example",
    "edge-head",
    "strategies",
    "lm-corpus",
    "strategy",
];

impl<S: Args + Layered> Invocation<S> {
    /// Fills unset flags from the config file. Relative paths in the file
    /// are taken as given, relative to the working directory.
    pub fn resolve(mut self) -> Result<(Common, S, Option<PathBuf>), Failure> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            let value: Value =
                serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            let Value::Object(object) = value else {
                return Err(Failure::input(format!("{}: config must be a JSON object", path.display())));
            };
            if let Some(k) = object
                .keys()
                .find(|k| !COMMON_KEYS.contains(&k.as_str()) && !SPECIFIC_KEYS.contains(&k.as_str()))
            {
                return Err(Failure::input(format!("{}: unknown key `{k}`", path.display())));
            }
            self.common.fill_from(from_object(&object, &COMMON_KEYS, path)?);
            self.specific.fill_from(from_object(&object, &SPECIFIC_KEYS, path)?);
        }
        Ok((self.common, self.specific, self.config))
    }
}

pub fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, Failure> {
    value.as_ref().ok_or_else(|| Failure::input(format!("missing required flag --{flag}")))
}
