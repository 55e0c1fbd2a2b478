// SPDX-License-Identifier: MIT OR Apache-2.0

//! Head-masking strategies and their effect on |SEAT| and perplexity.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bias::{build_embedding_bank, seat_abs, BiasScoreMap, MissingWordPolicy, WordOccurrences, WordSets};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::tokenizer::{TokenFlag, Tokenizer};
use crate::model::{HeadMaskGrid, Model};
use crate::scalar::Scalar;
use crate::tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskStrategy {
    /// No head masked.
    Baseline,
    TopK(usize),
    BottomK(usize),
    AllPositive,
    RandomK { k: usize, seed: u64 },
    /// As many random heads as there are positive scores.
    RandomAllPositive { seed: u64 },
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskStrategy::Baseline => write!(f, "baseline"),
            MaskStrategy::TopK(k) => write!(f, "top-{k}"),
            MaskStrategy::BottomK(k) => write!(f, "bottom-{k}"),
            MaskStrategy::AllPositive => write!(f, "all"),
            MaskStrategy::RandomK { k, .. } => write!(f, "random-{k}"),
            MaskStrategy::RandomAllPositive { .. } => write!(f, "random-all"),
        }
    }
}

impl MaskStrategy {
    /// Parses `baseline`, `top-K`, `bottom-K`, `all`, `random-K` or
    /// `random-all`; random strategies take `seed`.
    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown strategy `{s}`"));
        let k = |rest: &str| rest.parse::<usize>().map_err(|_| bad());
        Ok(match s {
            "baseline" => MaskStrategy::Baseline,
            "all" => MaskStrategy::AllPositive,
            "random-all" => MaskStrategy::RandomAllPositive { seed },
            _ => {
                if let Some(rest) = s.strip_prefix("top-") {
                    MaskStrategy::TopK(k(rest)?)
                } else if let Some(rest) = s.strip_prefix("bottom-") {
                    MaskStrategy::BottomK(k(rest)?)
                } else if let Some(rest) = s.strip_prefix("random-") {
                    MaskStrategy::RandomK { k: k(rest)?, seed }
                } else {
                    return Err(bad());
                }
            }
        })
    }
}

impl FromStr for MaskStrategy {
    type Err = Error;

    /// Random strategies get seed 0.
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s, 0)
    }
}

fn ranked<T: Scalar>(map: &BiasScoreMap<T>, descending: bool) -> Vec<(usize, usize)> {
    let mut all: Vec<((usize, usize), T)> = map.iter().collect();
    all.sort_by(|(ia, a), (ib, b)| {
        let ord = if descending { b.partial_cmp(a) } else { a.partial_cmp(b) };
        ord.unwrap_or(std::cmp::Ordering::Equal).then(ia.cmp(ib))
    });
    all.into_iter().map(|(h, _)| h).collect()
}

/// Heads a strategy masks, in selection order.
pub fn select_heads<T: Scalar>(map: &BiasScoreMap<T>, strategy: MaskStrategy) -> Result<Vec<(usize, usize)>> {
    let total = map.layers * map.heads;
    let check = |k: usize| {
        if k > total {
            Err(Error::InvalidArgument(format!("k = {k} exceeds the {total} heads")))
        } else {
            Ok(k)
        }
    };
    let positives = map.scores.iter().filter(|&&s| s > T::zero()).count();
    let random = |k: usize, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, total, k)
            .into_iter()
            .map(|i| (i / map.heads, i % map.heads))
            .collect()
    };
    Ok(match strategy {
        MaskStrategy::Baseline => Vec::new(),
        MaskStrategy::TopK(k) => ranked(map, true).into_iter().take(check(k)?).collect(),
        MaskStrategy::BottomK(k) => ranked(map, false).into_iter().take(check(k)?).collect(),
        MaskStrategy::AllPositive => ranked(map, true).into_iter().take(positives).collect(),
        MaskStrategy::RandomK { k, seed } => random(check(k)?, seed),
        MaskStrategy::RandomAllPositive { seed } => random(positives, seed),
    })
}

/// Mask grid with the selected heads at 0 and every other head at 1.
pub fn apply_strategy<T: Scalar>(map: &BiasScoreMap<T>, strategy: MaskStrategy) -> Result<HeadMaskGrid<T>> {
    let mut grid = HeadMaskGrid::ones(map.layers, map.heads);
    for (l, h) in select_heads(map, strategy)? {
        grid.set(l, h, T::zero())?;
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perplexity {
    pub value: f64,
    /// Scored token count.
    pub tokens: usize,
}

fn finish(parts: Vec<(f64, usize)>) -> Result<Perplexity> {
    let (mut sum, mut tokens) = (0.0, 0);
    for (s, n) in parts {
        sum += s;
        tokens += n;
    }
    if tokens == 0 {
        return Err(Error::Corpus("no tokens to score".into()));
    }
    let value = (-sum / tokens as f64).exp();
    if !value.is_finite() {
        return Err(Error::NonFinite {
            op: "perplexity",
            location: None,
        });
    }
    Ok(Perplexity { value, tokens })
}

/// Pseudo-perplexity of an encoder: each non-special token is replaced by
/// the mask token in turn and scored from its own position.
pub fn pppl<T: Scalar>(
    model: &Model<T>,
    tokenizer: &Tokenizer,
    masks: Option<&HeadMaskGrid<T>>,
    corpus: &Corpus,
) -> Result<Perplexity> {
    if model.is_causal() {
        return Err(Error::InvalidArgument("pseudo-perplexity needs an encoder".into()));
    }
    if model.weights.lm_head.is_none() {
        return Err(Error::InvalidArgument("model has no LM head weights".into()));
    }
    let mask_id = tokenizer.mask_id().ok_or_else(|| {
        Error::Tokenizer(format!("mask token `{}` not in vocabulary", tokenizer.config().mask))
    })?;
    let parts = corpus
        .sentences()
        .par_iter()
        .map(|s| {
            let enc = tokenizer.encode(s)?;
            let (mut sum, mut n) = (0.0, 0);
            for (pos, flag) in enc.flags.iter().enumerate() {
                if *flag == TokenFlag::Special {
                    continue;
                }
                let mut ids = enc.ids.clone();
                ids[pos] = mask_id;
                let out = model.forward(masks, &ids, false)?;
                let logits = model.lm_logits(out.hidden.row(pos))?;
                sum += tensor::log_softmax_row(&logits)[enc.ids[pos]].to_f64_lossless();
                n += 1;
            }
            Ok((sum, n))
        })
        .collect::<Result<Vec<_>>>()?;
    finish(parts)
}

/// Next-token perplexity of a decoder; the first token of each sentence is
/// context only.
pub fn causal_ppl<T: Scalar>(
    model: &Model<T>,
    tokenizer: &Tokenizer,
    masks: Option<&HeadMaskGrid<T>>,
    corpus: &Corpus,
) -> Result<Perplexity> {
    if !model.is_causal() {
        return Err(Error::InvalidArgument("causal perplexity needs a decoder".into()));
    }
    if model.weights.lm_head.is_none() {
        return Err(Error::InvalidArgument("model has no LM head weights".into()));
    }
    let parts = corpus
        .sentences()
        .par_iter()
        .map(|s| {
            let enc = tokenizer.encode(s)?;
            let out = model.forward(masks, &enc.ids, false)?;
            let mut sum = 0.0;
            for t in 1..enc.ids.len() {
                let logits = model.lm_logits(out.hidden.row(t - 1))?;
                sum += tensor::log_softmax_row(&logits)[enc.ids[t]].to_f64_lossless();
            }
            Ok((sum, enc.ids.len().saturating_sub(1)))
        })
        .collect::<Result<Vec<_>>>()?;
    finish(parts)
}

/// Pseudo-perplexity for encoders, next-token perplexity for decoders.
pub fn perplexity<T: Scalar>(
    model: &Model<T>,
    tokenizer: &Tokenizer,
    masks: Option<&HeadMaskGrid<T>>,
    corpus: &Corpus,
) -> Result<Perplexity> {
    if model.is_causal() {
        causal_ppl(model, tokenizer, masks, corpus)
    } else {
        pppl(model, tokenizer, masks, corpus)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub strategy: MaskStrategy,
    pub masked: Vec<(usize, usize)>,
    pub seat: f64,
    /// `"pppl"` or `"ppl"`.
    pub metric: &'static str,
    pub perplexity: f64,
    pub tokens: usize,
}

/// |SEAT| with the embedding bank rebuilt under `masks`.
pub fn masked_seat<T: Scalar>(
    model: &Model<T>,
    tokenizer: &Tokenizer,
    sets: &WordSets,
    corpus: &Corpus,
    masks: Option<&HeadMaskGrid<T>>,
    missing: MissingWordPolicy,
) -> Result<f64> {
    let occ = WordOccurrences::scan(corpus, tokenizer, &sets.all_words())?;
    let sets = occ.resolve(sets, missing)?;
    let bank = build_embedding_bank(model, masks, &occ)?;
    Ok(seat_abs(&sets, &bank)?.to_f64_lossless())
}

/// Baseline row first, then one row per strategy in the given order.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    tokenizer: &Tokenizer,
    sets: &WordSets,
    seat_corpus: &Corpus,
    lm_corpus: &Corpus,
    scores: &BiasScoreMap<T>,
    strategies: &[MaskStrategy],
    missing: MissingWordPolicy,
) -> Result<Vec<EvalReport>> {
    let metric = if model.is_causal() { "ppl" } else { "pppl" };
    std::iter::once(MaskStrategy::Baseline)
        .chain(strategies.iter().copied().filter(|s| *s != MaskStrategy::Baseline))
        .map(|strategy| {
            let masked = select_heads(scores, strategy)?;
            let grid = apply_strategy(scores, strategy)?;
            let seat = masked_seat(model, tokenizer, sets, seat_corpus, Some(&grid), missing)?;
            let ppl = perplexity(model, tokenizer, Some(&grid), lm_corpus)?;
            Ok(EvalReport {
                strategy,
                masked,
                seat,
                metric,
                perplexity: ppl.value,
                tokens: ppl.tokens,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> BiasScoreMap<f64> {
        BiasScoreMap::new(2, 2, vec![0.3, -0.1, 0.3, 0.9]).unwrap()
    }

    #[test]
    fn strategies_parse() {
        assert_eq!(MaskStrategy::parse("top-3", 0).unwrap(), MaskStrategy::TopK(3));
        assert_eq!(
            MaskStrategy::parse("random-2", 7).unwrap(),
            MaskStrategy::RandomK { k: 2, seed: 7 }
        );
        assert!(MaskStrategy::parse("top-x", 0).is_err());
    }

    #[test]
    fn ranking_breaks_ties_by_position() {
        assert_eq!(select_heads(&map(), MaskStrategy::TopK(3)).unwrap(), vec![(1, 1), (0, 0), (1, 0)]);
        assert_eq!(select_heads(&map(), MaskStrategy::BottomK(1)).unwrap(), vec![(0, 1)]);
        assert_eq!(select_heads(&map(), MaskStrategy::AllPositive).unwrap().len(), 3);
        assert!(select_heads(&map(), MaskStrategy::TopK(5)).is_err());
    }

    #[test]
    fn zero_k_leaves_all_heads() {
        let g = apply_strategy(&map(), MaskStrategy::TopK(0)).unwrap();
        assert!(g.masked_heads().is_empty());
    }
}
