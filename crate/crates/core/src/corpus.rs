// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::tokenizer::Tokenizer;

/// Sentence-per-line text. Blank lines are dropped; sentence ids index the
/// remaining lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    sentences: Vec<String>,
}

impl Corpus {
    pub fn new<I, S>(sentences: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            sentences: sentences
                .into_iter()
                .map(Into::into)
                .map(|s: String| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(text.lines()))
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// A whole-word match of a listed word inside one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordHit {
    /// Index into the tokenizer's word segmentation of the sentence.
    pub word_index: usize,
    /// Lowercased word as it appears in the word list.
    pub word: String,
}

/// Finds listed words in every sentence, case-insensitively and only as
/// whole words. Returns `(sentence id, hits)` for sentences with at least one
/// hit, in corpus order.
pub fn scan_words(corpus: &Corpus, tokenizer: &Tokenizer, words: &HashSet<String>) -> Vec<(usize, Vec<WordHit>)> {
    corpus
        .sentences()
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let hits: Vec<WordHit> = tokenizer
                .words(s)
                .iter()
                .enumerate()
                .filter_map(|(wi, w)| {
                    let lower = w.text.to_lowercase();
                    words.contains(&lower).then_some(WordHit {
                        word_index: wi,
                        word: lower,
                    })
                })
                .collect();
            (!hits.is_empty()).then_some((i, hits))
        })
        .collect()
}
