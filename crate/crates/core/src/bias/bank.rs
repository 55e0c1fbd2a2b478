// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;

use crate::autodiff::{Graph, NodeId};
use crate::bias::wordsets::WordSets;
use crate::corpus::{scan_words, Corpus, WordHit};
use crate::error::{Error, Result};
use crate::model::tokenizer::{EncodedSentence, Tokenizer};
use crate::model::{HeadMaskGrid, Model};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

/// What to do with list words that never occur in the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingWordPolicy {
    /// Fail and name every missing word.
    #[default]
    Error,
    /// Drop the words from their sets; fail only if a set becomes empty.
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Occurrence<T> {
    pub sentence: usize,
    pub word_index: usize,
    /// Mean of the final hidden states over the word's tokens.
    pub embedding: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry<T> {
    /// Mean over all occurrences.
    pub embedding: Vec<T>,
    pub occurrences: Vec<Occurrence<T>>,
}

impl<T> BankEntry<T> {
    pub fn count(&self) -> usize {
        self.occurrences.len()
    }
}

/// Contextual embedding of every list word found in the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank<T> {
    pub entries: BTreeMap<String, BankEntry<T>>,
    /// Listed words with no occurrence, sorted.
    pub missing: Vec<String>,
}

impl<T: Scalar> EmbeddingBank<T> {
    pub fn get(&self, word: &str) -> Option<&BankEntry<T>> {
        self.entries.get(word)
    }

    pub fn embedding(&self, word: &str) -> Result<&[T]> {
        self.entries
            .get(word)
            .map(|e| e.embedding.as_slice())
            .ok_or_else(|| Error::MissingWords(vec![word.to_string()]))
    }
}

/// Sentences that contain at least one list word, tokenized.
#[derive(Debug, Clone)]
pub struct WordOccurrences {
    pub sentences: Vec<(usize, EncodedSentence, Vec<WordHit>)>,
    pub missing: Vec<String>,
}

impl WordOccurrences {
    pub fn scan(corpus: &Corpus, tokenizer: &Tokenizer, words: &HashSet<String>) -> Result<Self> {
        let hits = scan_words(corpus, tokenizer, words);
        let mut seen = HashSet::new();
        let mut sentences = Vec::with_capacity(hits.len());
        for (id, hs) in hits {
            let enc = tokenizer
                .encode(&corpus.sentences()[id])
                .map_err(|e| Error::Corpus(format!("sentence {}: {e}", id + 1)))?;
            for h in &hs {
                seen.insert(h.word.clone());
            }
            sentences.push((id, enc, hs));
        }
        let mut missing: Vec<String> = words.difference(&seen).cloned().collect();
        missing.sort();
        Ok(Self { sentences, missing })
    }

    /// Applies the missing-word policy and returns the sets to use.
    pub fn resolve(&self, sets: &WordSets, policy: MissingWordPolicy) -> Result<WordSets> {
        if self.missing.is_empty() {
            return Ok(sets.clone());
        }
        match policy {
            MissingWordPolicy::Error => Err(Error::MissingWords(self.missing.clone())),
            MissingWordPolicy::Skip => {
                let missing: HashSet<&String> = self.missing.iter().collect();
                let present = sets.all_words().into_iter().filter(|w| !missing.contains(w)).collect();
                sets.restricted_to(&present)
            }
        }
    }
}

/// Word embedding inside a graph: mean of the hidden rows of the span.
pub(crate) fn span_embedding<T: Scalar>(
    g: &mut Graph<'_, T>,
    hidden: NodeId,
    enc: &EncodedSentence,
    word_index: usize,
) -> Result<NodeId> {
    let span = enc.word_spans[word_index].clone();
    if span.is_empty() {
        return Err(Error::Tokenizer(format!(
            "word `{}` produced no tokens",
            enc.words[word_index].text
        )));
    }
    let rows: Vec<usize> = span.collect();
    let sel = g.select_rows(hidden, &rows)?;
    g.mean(sel, 0)
}

fn span_embedding_plain<T: Scalar>(hidden: &Tensor<T>, enc: &EncodedSentence, word_index: usize) -> Result<Vec<T>> {
    let mut g = Graph::new(false);
    let h = g.constant(hidden.clone())?;
    let e = span_embedding(&mut g, h, enc, word_index)?;
    Ok(g.value(e).data().to_vec())
}

/// Mean of equally sized rows, with the same kernel the graph uses.
pub(crate) fn mean_rows<T: Scalar>(rows: &[&[T]]) -> Result<Vec<T>> {
    let d = rows.first().map_or(0, |r| r.len());
    let data: Vec<T> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    let stacked = Tensor::new(vec![rows.len(), d], data)?;
    Ok(tensor::mean_axis(&stacked, 0)?.into_data())
}

/// Runs the model over every sentence that mentions a list word and
/// averages occurrence embeddings per word.
pub fn build_embedding_bank<T: Scalar>(
    model: &Model<T>,
    masks: Option<&HeadMaskGrid<T>>,
    occurrences: &WordOccurrences,
) -> Result<EmbeddingBank<T>> {
    let per_sentence: Vec<Vec<(String, Occurrence<T>)>> = occurrences
        .sentences
        .par_iter()
        .map(|(id, enc, hits)| {
            let out = model.forward(masks, &enc.ids, false)?;
            hits.iter()
                .map(|h| {
                    Ok((
                        h.word.clone(),
                        Occurrence {
                            sentence: *id,
                            word_index: h.word_index,
                            embedding: span_embedding_plain(&out.hidden, enc, h.word_index)?,
                        },
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut grouped: BTreeMap<String, Vec<Occurrence<T>>> = BTreeMap::new();
    for (word, occ) in per_sentence.into_iter().flatten() {
        grouped.entry(word).or_default().push(occ);
    }
    let entries = grouped
        .into_iter()
        .map(|(word, occurrences)| {
            let rows: Vec<&[T]> = occurrences.iter().map(|o| o.embedding.as_slice()).collect();
            let embedding = mean_rows(&rows)?;
            Ok((word, BankEntry { embedding, occurrences }))
        })
        .collect::<Result<_>>()?;
    Ok(EmbeddingBank {
        entries,
        missing: occurrences.missing.clone(),
    })
}
