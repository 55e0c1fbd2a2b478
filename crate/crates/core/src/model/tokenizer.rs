// SPDX-License-Identifier: MIT OR Apache-2.0

//! WordPiece, byte-level BPE and pre-tokenized encoders with word spans.
//!
//! A *word* is a maximal run of non-whitespace, non-punctuation characters,
//! or a single punctuation character (Unicode general category `P*`). The
//! pre-tokenized mode treats every whitespace-separated token as one word.
//! Word spans are recorded while encoding, so repeated words never need to
//! be realigned afterwards.

use std::collections::HashMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use unicode_general_category::get_general_category;

use crate::error::{Error, Result};
use crate::model::config::{Architecture, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenizerMode {
    WordPiece,
    ByteBpe,
    Pretokenized,
}

impl std::str::FromStr for TokenizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wordpiece" => Ok(TokenizerMode::WordPiece),
            "byte-bpe" => Ok(TokenizerMode::ByteBpe),
            "pretokenized" => Ok(TokenizerMode::Pretokenized),
            other => Err(Error::Tokenizer(format!("unknown tokenizer mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenFlag {
    Special,
    Punctuation,
    Regular,
}

/// A word of the source text with its byte range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub start: usize,
    pub end: usize,
    /// Whether whitespace immediately precedes the word.
    pub space_before: bool,
}

impl Word {
    pub fn is_punctuation(&self) -> bool {
        !self.text.is_empty() && self.text.chars().all(is_punctuation)
    }
}

pub fn is_punctuation(c: char) -> bool {
    get_general_category(c).abbreviation().starts_with('P')
}

/// Splits text into words: whitespace separates, punctuation characters
/// stand alone.
pub fn split_words(text: &str) -> Vec<Word> {
    let mut words = Vec::new();
    let mut current: Option<(usize, bool)> = None;
    let mut space_before = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some((s, sp)) = current.take() {
                words.push(word(text, s, i, sp));
            }
            space_before = true;
        } else if is_punctuation(c) {
            if let Some((s, sp)) = current.take() {
                words.push(word(text, s, i, sp));
                space_before = false;
            }
            words.push(word(text, i, i + c.len_utf8(), space_before));
            space_before = false;
        } else if current.is_none() {
            current = Some((i, space_before));
            space_before = false;
        }
    }
    if let Some((s, sp)) = current {
        words.push(word(text, s, text.len(), sp));
    }
    words
}

fn split_whitespace_words(text: &str) -> Vec<Word> {
    let mut words = Vec::new();
    let mut start = None;
    let mut space_before = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                words.push(word(text, s, i, space_before));
            }
            space_before = true;
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        words.push(word(text, s, text.len(), space_before));
    }
    words
}

fn word(text: &str, start: usize, end: usize, space_before: bool) -> Word {
    Word {
        text: text[start..end].to_string(),
        start,
        end,
        space_before: space_before && start > 0,
    }
}

#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(Error::Tokenizer("empty vocabulary".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            ids.entry(t.clone()).or_insert(i);
        }
        Ok(Self { tokens, ids })
    }

    /// One token per line; the line number is the id.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines = text.strip_suffix('\n').unwrap_or(&text).split('\n');
        Self::from_tokens(lines.map(|l| l.strip_suffix('\r').unwrap_or(l))).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Ranked BPE merges.
#[derive(Debug, Clone, Default)]
pub struct Merges {
    ranks: HashMap<(String, String), usize>,
}

impl Merges {
    pub fn from_pairs<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut ranks = HashMap::new();
        for (i, (a, b)) in pairs.into_iter().enumerate() {
            ranks.entry((a.into(), b.into())).or_insert(i);
        }
        Self { ranks }
    }

    /// One `left right` pair per line; a leading `#version` line is skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() || (n == 0 && line.starts_with("#version")) {
                continue;
            }
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| Error::Tokenizer(format!("merges line {}: expected `left right`", n + 1)))?;
            pairs.push((a.to_string(), b.to_string()));
        }
        Ok(Self::from_pairs(pairs))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TokenizerConfig {
    pub mode: TokenizerMode,
    pub lowercase: bool,
    /// Add `cls` before and `sep` after the sentence.
    pub boundary_tokens: bool,
    pub cls: String,
    pub sep: String,
    pub unk: String,
    pub mask: String,
    pub max_len: usize,
    /// Longer words map to the unknown token (WordPiece only).
    pub max_word_chars: usize,
}

impl TokenizerConfig {
    pub fn new(mode: TokenizerMode, max_len: usize) -> Self {
        Self {
            mode,
            lowercase: mode == TokenizerMode::WordPiece,
            boundary_tokens: false,
            cls: "[CLS]".into(),
            sep: "[SEP]".into(),
            unk: "[UNK]".into(),
            mask: "[MASK]".into(),
            max_len,
            max_word_chars: 100,
        }
    }

    /// Defaults for a model: encoders get sentence-boundary tokens,
    /// decoders none.
    pub fn for_model(config: &ModelConfig, mode: TokenizerMode) -> Self {
        Self {
            boundary_tokens: config.architecture == Architecture::Encoder,
            ..Self::new(mode, config.max_positions)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence {
    pub ids: Vec<usize>,
    pub tokens: Vec<String>,
    pub flags: Vec<TokenFlag>,
    pub words: Vec<Word>,
    /// Token range of each word, aligned with `words`.
    pub word_spans: Vec<Range<usize>>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: Vocab,
    merges: Option<Merges>,
    byte_map: Vec<char>,
    config: TokenizerConfig,
}

impl Tokenizer {
    pub fn new(vocab: Vocab, merges: Option<Merges>, config: TokenizerConfig) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::Tokenizer("empty vocabulary".into()));
        }
        if config.mode == TokenizerMode::WordPiece && vocab.id(&config.unk).is_none() {
            return Err(Error::Tokenizer(format!("unknown token `{}` not in vocabulary", config.unk)));
        }
        if config.mode == TokenizerMode::ByteBpe && merges.is_none() {
            return Err(Error::Tokenizer("byte-level BPE needs a merges file".into()));
        }
        if config.boundary_tokens {
            for t in [&config.cls, &config.sep] {
                if vocab.id(t).is_none() {
                    return Err(Error::Tokenizer(format!("boundary token `{t}` not in vocabulary")));
                }
            }
        }
        Ok(Self {
            vocab,
            merges,
            byte_map: bytes_to_unicode(),
            config,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    pub fn mask_id(&self) -> Option<usize> {
        self.vocab.id(&self.config.mask)
    }

    /// Word segmentation used by this tokenizer.
    pub fn words(&self, text: &str) -> Vec<Word> {
        match self.config.mode {
            TokenizerMode::Pretokenized => split_whitespace_words(text),
            _ => split_words(text),
        }
    }

    pub fn encode(&self, text: &str) -> Result<EncodedSentence> {
        let words = self.words(text);
        let mut out = EncodedSentence {
            ids: Vec::new(),
            tokens: Vec::new(),
            flags: Vec::new(),
            words: Vec::new(),
            word_spans: Vec::new(),
        };
        if self.config.boundary_tokens {
            self.push_special(&mut out, &self.config.cls.clone());
        }
        for w in &words {
            let pieces = self.encode_word(w)?;
            let flag = if w.is_punctuation() {
                TokenFlag::Punctuation
            } else {
                TokenFlag::Regular
            };
            let start = out.ids.len();
            for (token, id) in pieces {
                out.ids.push(id);
                out.tokens.push(token);
                out.flags.push(flag);
            }
            out.word_spans.push(start..out.ids.len());
        }
        if self.config.boundary_tokens {
            self.push_special(&mut out, &self.config.sep.clone());
        }
        out.words = words;
        if out.ids.len() > self.config.max_len {
            return Err(Error::Tokenizer(format!(
                "sentence has {} tokens, limit is {}",
                out.ids.len(),
                self.config.max_len
            )));
        }
        Ok(out)
    }

    fn push_special(&self, out: &mut EncodedSentence, token: &str) {
        out.ids.push(self.vocab.id(token).expect("checked at construction"));
        out.tokens.push(token.to_string());
        out.flags.push(TokenFlag::Special);
    }

    fn encode_word(&self, w: &Word) -> Result<Vec<(String, usize)>> {
        match self.config.mode {
            TokenizerMode::Pretokenized => {
                let id = self
                    .vocab
                    .id(&w.text)
                    .ok_or_else(|| Error::Tokenizer(format!("token `{}` not in vocabulary", w.text)))?;
                Ok(vec![(w.text.clone(), id)])
            }
            TokenizerMode::WordPiece => Ok(self.wordpiece(w)),
            TokenizerMode::ByteBpe => self.byte_bpe(w),
        }
    }

    fn unk(&self) -> (String, usize) {
        let id = self.vocab.id(&self.config.unk).expect("checked at construction");
        (self.config.unk.clone(), id)
    }

    /// Greedy longest-match-first with `##` continuation pieces.
    fn wordpiece(&self, w: &Word) -> Vec<(String, usize)> {
        let text = if self.config.lowercase {
            w.text.to_lowercase()
        } else {
            w.text.clone()
        };
        let chars: Vec<char> = text.chars().collect();
        if chars.len() > self.config.max_word_chars {
            return vec![self.unk()];
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let mut candidate: String = chars[start..end].iter().collect();
                if start > 0 {
                    candidate.insert_str(0, "##");
                }
                if let Some(id) = self.vocab.id(&candidate) {
                    found = Some((candidate, id));
                    break;
                }
                end -= 1;
            }
            match found {
                Some(piece) => pieces.push(piece),
                None => return vec![self.unk()],
            }
            start = end;
        }
        pieces
    }

    fn byte_bpe(&self, w: &Word) -> Result<Vec<(String, usize)>> {
        let merges = self.merges.as_ref().expect("checked at construction");
        let mut raw = String::new();
        if w.space_before {
            raw.push(' ');
        }
        raw.push_str(&w.text);
        let mut symbols: Vec<String> = raw.bytes().map(|b| self.byte_map[b as usize].to_string()).collect();
        loop {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, pair)| merges.ranks.get(&(pair[0].clone(), pair[1].clone())).map(|r| (*r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len()
                    && merges.ranks.get(&(symbols[i].clone(), symbols[i + 1].clone())) == Some(&rank)
                {
                    merged.push(format!("{}{}", symbols[i], symbols[i + 1]));
                    i += 2;
                } else {
                    merged.push(symbols[i].clone());
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
            .into_iter()
            .map(|s| match self.vocab.id(&s) {
                Some(id) => Ok((s, id)),
                None => match self.vocab.id(&self.config.unk) {
                    Some(id) => Ok((self.config.unk.clone(), id)),
                    None => Err(Error::Tokenizer(format!("BPE symbol `{s}` not in vocabulary"))),
                },
            })
            .collect()
    }
}

/// GPT-2 byte-to-character table: printable bytes map to themselves, the
/// rest to code points from 256 upward.
pub fn bytes_to_unicode() -> Vec<char> {
    let printable = |b: u32| (0x21..=0x7e).contains(&b) || (0xa1..=0xac).contains(&b) || (0xae..=0xff).contains(&b);
    let mut next = 256u32;
    (0u32..256)
        .map(|b| {
            if printable(b) {
                char::from_u32(b).unwrap()
            } else {
                let c = char::from_u32(next).unwrap();
                next += 1;
                c
            }
        })
        .collect()
}
