// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::autodiff::{Graph, NodeId};
use crate::bias::bank::{build_embedding_bank, span_embedding, MissingWordPolicy, WordOccurrences};
use crate::bias::seat::seat_node;
use crate::bias::wordsets::WordSets;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::tokenizer::Tokenizer;
use crate::model::{HeadMaskGrid, Model};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Bias score of every head, layer-major, zero-based indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasScoreMap<T> {
    pub layers: usize,
    pub heads: usize,
    pub scores: Vec<T>,
}

impl<T: Scalar> BiasScoreMap<T> {
    pub fn new(layers: usize, heads: usize, scores: Vec<T>) -> Result<Self> {
        if scores.len() != layers * heads {
            return Err(Error::InvalidArgument(format!(
                "{} scores for a {layers}x{heads} grid",
                scores.len()
            )));
        }
        Ok(Self { layers, heads, scores })
    }

    pub fn get(&self, layer: usize, head: usize) -> T {
        self.scores[layer * self.heads + head]
    }

    /// `((layer, head), score)` in layer-major order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), T)> + '_ {
        self.scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ((i / self.heads, i % self.heads), s))
    }
}

/// Heads split at zero: positive scores are biased, the rest regular. Both
/// lists run from largest to smallest magnitude, ties by (layer, head).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadPartition {
    pub biased: Vec<(usize, usize)>,
    pub regular: Vec<(usize, usize)>,
}

pub fn classify_heads<T: Scalar>(map: &BiasScoreMap<T>) -> HeadPartition {
    let mut all: Vec<((usize, usize), T)> = map.iter().collect();
    all.sort_by(|(ia, a), (ib, b)| {
        b.abs()
            .partial_cmp(&a.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ia.cmp(ib))
    });
    let (biased, regular): (Vec<_>, Vec<_>) = all.into_iter().partition(|(_, s)| *s > T::zero());
    HeadPartition {
        biased: biased.into_iter().map(|(h, _)| h).collect(),
        regular: regular.into_iter().map(|(h, _)| h).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// One recorded graph over every sentence, one reverse pass.
    #[default]
    SingleGraph,
    /// Gradient with respect to each occurrence embedding first, then one
    /// small reverse pass per sentence. Memory stays bounded by one sentence.
    Chunked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BiasScoreOptions {
    pub mode: GradientMode,
    pub missing: MissingWordPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasScoreResult<T> {
    pub scores: BiasScoreMap<T>,
    /// |SEAT| with every mask at 1.
    pub seat: T,
    /// Word sets after the missing-word policy.
    pub sets: WordSets,
    /// Sentences that contributed at least one occurrence.
    pub sentences: usize,
}

/// Gradient of |SEAT| with respect to every head mask, evaluated at 1.
pub fn head_bias_scores<T: Scalar>(
    model: &Model<T>,
    tokenizer: &Tokenizer,
    sets: &WordSets,
    corpus: &Corpus,
    options: BiasScoreOptions,
) -> Result<BiasScoreResult<T>> {
    let occ = WordOccurrences::scan(corpus, tokenizer, &sets.all_words())?;
    let sets = occ.resolve(sets, options.missing)?;
    let (grads, seat) = match options.mode {
        GradientMode::SingleGraph => single_graph(model, &sets, &occ)?,
        GradientMode::Chunked => chunked(model, &sets, &occ)?,
    };
    let c = &model.config;
    Ok(BiasScoreResult {
        scores: BiasScoreMap::new(c.num_layers, c.num_heads, grads)?,
        seat,
        sets,
        sentences: occ.sentences.len(),
    })
}

/// Word nodes (mean over occurrences) for X, Y, A, B.
fn word_nodes<T: Scalar>(
    g: &mut Graph<'_, T>,
    sets: &WordSets,
    occurrences: &BTreeMap<String, Vec<NodeId>>,
) -> Result<[Vec<NodeId>; 4]> {
    let mut side = |words: &[String]| -> Result<Vec<NodeId>> {
        words
            .iter()
            .map(|w| {
                let occ = occurrences
                    .get(w)
                    .ok_or_else(|| Error::MissingWords(vec![w.clone()]))?;
                let stacked = g.stack(occ)?;
                g.mean(stacked, 0)
            })
            .collect()
    };
    Ok([side(&sets.x)?, side(&sets.y)?, side(&sets.a)?, side(&sets.b)?])
}

fn seat_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    sets: &WordSets,
    occurrences: &BTreeMap<String, Vec<NodeId>>,
) -> Result<NodeId> {
    let [x, y, a, b] = word_nodes(g, sets, occurrences)?;
    seat_node(g, &x, &y, &a, &b)
}

fn single_graph<T: Scalar>(model: &Model<T>, sets: &WordSets, occ: &WordOccurrences) -> Result<(Vec<T>, T)> {
    let masks = HeadMaskGrid::for_config(&model.config);
    let mut g = Graph::new(true);
    let mask_nodes = masks.register(&mut g)?;
    let mut occurrences: BTreeMap<String, Vec<NodeId>> = BTreeMap::new();
    for (_, enc, hits) in &occ.sentences {
        let hidden = model.forward_graph(&mut g, Some(&mask_nodes), &enc.ids, None)?;
        for h in hits {
            let e = span_embedding(&mut g, hidden, enc, h.word_index)?;
            occurrences.entry(h.word.clone()).or_default().push(e);
        }
    }
    let loss = seat_loss(&mut g, sets, &occurrences)?;
    let seat = g.value(loss).item();
    let grads = g.backward(loss)?;
    Ok((mask_nodes.iter().map(|&n| grads.scalar(n)).collect(), seat))
}

fn chunked<T: Scalar>(model: &Model<T>, sets: &WordSets, occ: &WordOccurrences) -> Result<(Vec<T>, T)> {
    let masks = HeadMaskGrid::for_config(&model.config);
    let bank = build_embedding_bank(model, Some(&masks), occ)?;

    // dL/de for every occurrence embedding
    let mut g = Graph::new(true);
    let mut occurrences: BTreeMap<String, Vec<NodeId>> = BTreeMap::new();
    let mut by_site: BTreeMap<(usize, usize), NodeId> = BTreeMap::new();
    for (word, entry) in &bank.entries {
        for o in &entry.occurrences {
            let n = g.variable(Tensor::vector(o.embedding.clone()))?;
            occurrences.entry(word.clone()).or_default().push(n);
            by_site.insert((o.sentence, o.word_index), n);
        }
    }
    let loss = seat_loss(&mut g, sets, &occurrences)?;
    let seat = g.value(loss).item();
    let grads = g.backward(loss)?;
    let upstream = |site: (usize, usize)| -> Option<Tensor<T>> { grads.get(by_site[&site]).cloned() };

    let per_sentence: Vec<Vec<T>> = occ
        .sentences
        .par_iter()
        .map(|(id, enc, hits)| {
            let mut g = Graph::new(true);
            let mask_nodes = masks.register(&mut g)?;
            let hidden = model.forward_graph(&mut g, Some(&mask_nodes), &enc.ids, None)?;
            let mut total: Option<NodeId> = None;
            for h in hits {
                // words dropped by the missing-word policy have no upstream gradient
                let Some(up) = upstream((*id, h.word_index)) else { continue };
                let e = span_embedding(&mut g, hidden, enc, h.word_index)?;
                let c = g.constant(up)?;
                let prod = g.mul(e, c)?;
                let s = g.sum(prod)?;
                total = Some(match total {
                    Some(t) => g.add(t, s)?,
                    None => s,
                });
            }
            let Some(total) = total else {
                return Ok(vec![T::zero(); mask_nodes.len()]);
            };
            let gr = g.backward(total)?;
            Ok(mask_nodes.iter().map(|&n| gr.scalar(n)).collect())
        })
        .collect::<Result<_>>()?;

    let mut acc = vec![T::zero(); model.config.num_head_slots()];
    for row in per_sentence {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    Ok((acc, seat))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_is_strict_at_zero_and_sorted_by_magnitude() {
        let map = BiasScoreMap::new(2, 2, vec![0.5f64, 0.0, -2.0, 0.5]).unwrap();
        let p = classify_heads(&map);
        assert_eq!(p.biased, vec![(0, 0), (1, 1)]);
        assert_eq!(p.regular, vec![(1, 0), (0, 1)]);
    }
}
