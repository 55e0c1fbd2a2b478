// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded random models for tests, demos and the acceptance suite.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bias::WordSets;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::archive::write_archive;
use crate::model::tokenizer::{Tokenizer, TokenizerConfig, TokenizerMode, Vocab};
use crate::model::weights::expected_tensors;
use crate::model::{Model, ModelConfig, ModelWeights};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Random weights for every tensor the config implies, LM head included.
///
/// Matrices are uniform in `[-scale, scale]`, layer-norm gains are near one
/// and biases near zero.
pub fn random_model<T: Scalar>(config: &ModelConfig, seed: u64, scale: f64) -> Model<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut named = BTreeMap::new();
    for (name, shape, _) in expected_tensors(config) {
        let n: usize = shape.iter().product();
        let data: Vec<T> = if name.ends_with(".gain") {
            (0..n).map(|_| T::lit(1.0 + rng.gen_range(-0.1..0.1))).collect()
        } else if name.ends_with(".bias") {
            (0..n).map(|_| T::lit(rng.gen_range(-0.1..0.1))).collect()
        } else {
            (0..n).map(|_| T::lit(rng.gen_range(-scale..scale))).collect()
        };
        named.insert(name, Tensor::new(shape, data).expect("shape matches data"));
    }
    let weights = ModelWeights::from_named(config, named).expect("complete random weights");
    Model {
        config: config.clone(),
        weights,
    }
}

/// A model with matching tokenizer, word sets and corpus.
#[derive(Debug, Clone)]
pub struct Fixture<T> {
    pub model: Model<T>,
    pub tokenizer: Tokenizer,
    pub sets: WordSets,
    pub corpus: Corpus,
    /// Zero-based (layer, head) carrying the planted association.
    pub planted: Option<(usize, usize)>,
    pub vocab: Vec<String>,
}

pub const PLANTED_PAIRS: [(&str, &str); 6] = [
    ("woman", "man"),
    ("women", "men"),
    ("she", "he"),
    ("girl", "boy"),
    ("mother", "father"),
    ("sister", "brother"),
];
pub const PLANTED_X: [&str; 6] = ["emotional", "gentle", "caring", "tender", "graceful", "patient"];
pub const PLANTED_Y: [&str; 6] = ["strong", "logical", "brave", "rational", "tough", "bold"];
const FILLERS: [&str; 12] = [
    "the", "a", "is", "was", "seems", "very", "quite", "often", "always", "really", "so", "rather",
];

const HIDDEN: usize = 16;
const HEADS: usize = 4;
const POLARITY: usize = 13;
const GENDER: [usize; 2] = [14, 15];
const PLANTED_HEAD: usize = 2;

fn quarter(rng: &mut ChaCha8Rng, max_quarters: i32) -> f64 {
    rng.gen_range(-max_quarters..=max_quarters) as f64 / 4.0
}

/// One-layer encoder whose planted head attends from stereotype targets to
/// congruent attribute words and copies their gender direction, plus
/// `sentences` congruent sentences. Every sentence has exactly one
/// attribute and one target word. Other heads are random but blind to the
/// gender dimensions.
pub fn planted_bias_fixture<T: Scalar>(seed: u64, sentences: usize) -> Fixture<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vocab: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "."]
        .iter()
        .map(|s| s.to_string())
        .collect();
    vocab.extend(FILLERS.iter().map(|s| s.to_string()));
    for (a, b) in PLANTED_PAIRS {
        vocab.push(a.into());
        vocab.push(b.into());
    }
    vocab.extend(PLANTED_X.iter().chain(&PLANTED_Y).map(|s| s.to_string()));
    let v = vocab.len();
    let id = |w: &str| vocab.iter().position(|t| t == w).unwrap();

    // token embeddings: content dims are quarters in [-1, 1]; the gender
    // pair of dims always holds (g, -g)
    let mut tok = vec![0.0f64; v * HIDDEN];
    let set_gender = |tok: &mut Vec<f64>, row: usize, g: f64| {
        tok[row * HIDDEN + GENDER[0]] = g;
        tok[row * HIDDEN + GENDER[1]] = -g;
    };
    for row in 0..v {
        for c in 0..POLARITY {
            tok[row * HIDDEN + c] = quarter(&mut rng, 4);
        }
    }
    for f in FILLERS.iter().chain(["."].iter()) {
        let g = quarter(&mut rng, 5);
        set_gender(&mut tok, id(f), g);
    }
    for (a, b) in PLANTED_PAIRS {
        let (ia, ib) = (id(a), id(b));
        for c in 0..POLARITY {
            tok[ib * HIDDEN + c] = tok[ia * HIDDEN + c];
        }
        let g = rng.gen_range(2..=4) as f64 / 4.0;
        set_gender(&mut tok, ia, g);
        set_gender(&mut tok, ib, -g);
    }
    for (words, sign) in [(&PLANTED_X, 1.0), (&PLANTED_Y, -1.0)] {
        for w in words.iter() {
            let r = id(w);
            tok[r * HIDDEN + POLARITY] = sign * rng.gen_range(2..=4) as f64 / 4.0;
            let g = quarter(&mut rng, 2);
            set_gender(&mut tok, r, g);
        }
    }

    let config = ModelConfig {
        max_positions: 32,
        ..ModelConfig::tiny_encoder(1, HEADS, HIDDEN, v)
    };
    let mut named = random_model::<f64>(&config, seed ^ 0x5eed, 0.3).weights.to_named();
    let dh = HIDDEN / HEADS;
    let slot = PLANTED_HEAD * dh;
    let mut edit = |name: &str, f: &mut dyn FnMut(&mut Vec<f64>, &[usize])| {
        let t = named.get_mut(name).unwrap();
        let shape = t.shape().to_vec();
        let mut data = t.data().to_vec();
        f(&mut data, &shape);
        *t = Tensor::new(shape, data).unwrap();
    };
    edit("embeddings.token", &mut |d, _| d.copy_from_slice(&tok));
    edit("embeddings.position", &mut |d, _| d.fill(0.0));
    edit("embeddings.segment", &mut |d, _| d.fill(0.0));
    edit("embeddings.ln.gain", &mut |d, _| d.fill(1.0));
    edit("embeddings.ln.bias", &mut |d, _| d.fill(0.0));
    // projections are [in, out]
    for name in ["q", "k", "v"] {
        edit(&format!("layers.0.attn.{name}.weight"), &mut |d, s| {
            let cols = s[1];
            for r in 0..HIDDEN {
                for c in 0..cols {
                    let in_planted = (slot..slot + dh).contains(&c);
                    if in_planted || GENDER.contains(&r) {
                        d[r * cols + c] = 0.0;
                    }
                }
            }
            match name {
                "q" => d[POLARITY * cols + slot] = 1.5,
                "k" => {
                    d[GENDER[0] * cols + slot] = 1.5;
                    d[GENDER[1] * cols + slot] = -1.5;
                }
                _ => {
                    d[GENDER[0] * cols + slot + 1] = 1.0;
                    d[GENDER[1] * cols + slot + 1] = -1.0;
                }
            }
        });
        edit(&format!("layers.0.attn.{name}.bias"), &mut |d, _| d[slot..slot + dh].fill(0.0));
    }
    edit("layers.0.attn.out.weight", &mut |d, s| {
        let cols = s[1];
        for r in 0..HIDDEN {
            for &g in &GENDER {
                d[r * cols + g] = 0.0;
            }
            if (slot..slot + dh).contains(&r) {
                d[r * cols..(r + 1) * cols].fill(0.0);
            }
        }
        d[(slot + 1) * cols + GENDER[0]] = 1.0;
        d[(slot + 1) * cols + GENDER[1]] = -1.0;
    });
    // gender dims pass through the feed-forward block untouched
    edit("layers.0.ffn.in.weight", &mut |d, s| {
        for &g in &GENDER {
            d[g * s[1]..(g + 1) * s[1]].fill(0.0);
        }
    });
    edit("layers.0.ffn.out.weight", &mut |d, s| {
        for r in 0..s[0] {
            for &g in &GENDER {
                d[r * s[1] + g] = 0.0;
            }
        }
    });
    for name in ["layers.0.attn.out.bias", "layers.0.ffn.out.bias"] {
        edit(name, &mut |d, _| {
            for &g in &GENDER {
                d[g] = 0.0;
            }
        });
    }
    for ln in ["ln_attn", "ln_ffn"] {
        edit(&format!("layers.0.{ln}.gain"), &mut |d, _| {
            for &g in &GENDER {
                d[g] = 1.0;
            }
        });
        edit(&format!("layers.0.{ln}.bias"), &mut |d, _| {
            for &g in &GENDER {
                d[g] = 0.0;
            }
        });
    }
    let weights = ModelWeights::from_named(&config, named).expect("complete planted weights");
    let model = Model {
        config: config.clone(),
        weights,
    }
    .cast::<T>();

    let mut lines = Vec::with_capacity(sentences);
    for _ in 0..sentences {
        let pair = PLANTED_PAIRS[rng.gen_range(0..PLANTED_PAIRS.len())];
        let female = rng.gen_bool(0.5);
        let attr = if female { pair.0 } else { pair.1 };
        let target = if female { &PLANTED_X } else { &PLANTED_Y }[rng.gen_range(0..6)];
        let det = ["the", "a"][rng.gen_range(0..2)];
        let verb = ["is", "was", "seems"][rng.gen_range(0..3)];
        let adv = ["very", "quite", "often", "always", "really", "so", "rather"][rng.gen_range(0..7)];
        let capital = rng.gen_bool(0.25);
        let mut s = format!("{det} {attr} {verb} {adv} {target} .");
        if capital {
            s = s[..1].to_uppercase() + &s[1..];
        }
        lines.push(s);
    }
    let tokenizer = Tokenizer::new(
        Vocab::from_tokens(vocab.clone()).expect("non-empty vocab"),
        None,
        TokenizerConfig::for_model(&config, TokenizerMode::WordPiece),
    )
    .expect("valid tokenizer");
    let sets = WordSets::new(&PLANTED_PAIRS, &PLANTED_X, &PLANTED_Y).expect("valid word sets");
    Fixture {
        model,
        tokenizer,
        sets,
        corpus: Corpus::new(lines),
        planted: Some((0, PLANTED_HEAD)),
        vocab,
    }
}

const RANDOM_PAIRS: [(&str, &str); 4] = [("she", "he"), ("woman", "man"), ("girl", "boy"), ("mother", "father")];
const RANDOM_X: [&str; 4] = ["nurse", "dancer", "gentle", "caring"];
const RANDOM_Y: [&str; 4] = ["engineer", "pilot", "strong", "logical"];

/// Random model over a `vocab_size` word vocabulary with a corpus in which
/// every list word occurs at least once.
pub fn random_fixture<T: Scalar>(config: &ModelConfig, seed: u64, sentences: usize) -> Fixture<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vocab: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let listed: Vec<&str> = RANDOM_PAIRS
        .iter()
        .flat_map(|(a, b)| [*a, *b])
        .chain(RANDOM_X)
        .chain(RANDOM_Y)
        .collect();
    vocab.extend(listed.iter().map(|s| s.to_string()));
    let mut i = 0;
    while vocab.len() < config.vocab_size {
        vocab.push(format!("w{i}"));
        i += 1;
    }
    vocab.truncate(config.vocab_size);
    let words = &vocab[5..];
    let max_words = config.max_positions.saturating_sub(2).clamp(1, 10);
    let lines: Vec<String> = (0..sentences)
        .map(|s| {
            let len = rng.gen_range(max_words.min(4)..=max_words);
            let mut ws: Vec<&str> = (0..len).map(|_| words[rng.gen_range(0..words.len())].as_str()).collect();
            if s < listed.len() {
                ws[0] = listed[s];
            }
            ws.join(" ")
        })
        .collect();
    let mut model = random_model::<T>(config, seed, 0.5);
    model.config = config.clone();
    let tokenizer = Tokenizer::new(
        Vocab::from_tokens(vocab.clone()).expect("non-empty vocab"),
        None,
        TokenizerConfig::for_model(config, TokenizerMode::WordPiece),
    )
    .expect("valid tokenizer");
    Fixture {
        model,
        tokenizer,
        sets: WordSets::new(&RANDOM_PAIRS, &RANDOM_X, &RANDOM_Y).expect("valid word sets"),
        corpus: Corpus::new(lines),
        planted: None,
        vocab,
    }
}

/// Paths written by [`Fixture::write_files`].
#[derive(Debug, Clone)]
pub struct FixtureFiles {
    pub model: PathBuf,
    pub vocab: PathBuf,
    pub wordlists: PathBuf,
    pub corpus: PathBuf,
}

impl Fixture<f32> {
    /// Writes `model.bin`, `vocab.txt`, `wordlists.json` and `corpus.txt`
    /// into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<FixtureFiles> {
        let files = FixtureFiles {
            model: dir.join("model.bin"),
            vocab: dir.join("vocab.txt"),
            wordlists: dir.join("wordlists.json"),
            corpus: dir.join("corpus.txt"),
        };
        write_archive(&files.model, &self.model.config, &self.model.weights)?;
        let write = |path: &Path, text: String| fs::write(path, text).map_err(|e| Error::io(path, e));
        write(&files.vocab, self.vocab.join("\n") + "\n")?;
        let lists = serde_json::to_string_pretty(&self.sets.to_file_struct()).expect("word lists serialize");
        write(&files.wordlists, lists + "\n")?;
        write(&files.corpus, self.corpus.sentences().join("\n") + "\n")?;
        Ok(files)
    }
}
