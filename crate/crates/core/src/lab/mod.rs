// SPDX-License-Identifier: MIT OR Apache-2.0

//! Counter-stereotype experiment: attention from a target word to its
//! attribute word, compared with the attribute swapped for its counterpart.

pub mod attention;
pub mod mining;
pub mod stats;

use rayon::prelude::*;

use crate::bias::{HeadPartition, WordSets};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::tokenizer::Tokenizer;
use crate::model::Model;
use crate::scalar::Scalar;

pub use attention::{attention_between, normalized_row, token_span, AttentionValue};
pub use mining::{make_counterparts, match_case, mine_sentences, MinedSentence, StereotypePair};
pub use stats::{head_ttest, student_t_upper_tail, StatResult};

/// How a head group's samples enter the t-test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupAggregation {
    /// One value per sentence pair: the mean of d over the group's heads.
    #[default]
    SentenceMean,
    /// Every (pair, head) d value as its own sample.
    Pooled,
}

impl std::str::FromStr for GroupAggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence-mean" => Ok(Self::SentenceMean),
            "pooled" => Ok(Self::Pooled),
            other => Err(Error::InvalidArgument(format!("unknown group aggregation `{other}`"))),
        }
    }
}

/// Normalized attention per pair and head, layer-major within a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffTable {
    pub pairs: usize,
    pub layers: usize,
    pub heads: usize,
    pub w_orig: Vec<f64>,
    pub w_counter: Vec<f64>,
    /// Either sentence had a degenerate normalization row at this head.
    pub degenerate: Vec<bool>,
}

impl DiffTable {
    fn slot(&self, pair: usize, layer: usize, head: usize) -> usize {
        (pair * self.layers + layer) * self.heads + head
    }

    pub fn w(&self, pair: usize, layer: usize, head: usize) -> (f64, f64) {
        let i = self.slot(pair, layer, head);
        (self.w_orig[i], self.w_counter[i])
    }

    pub fn d(&self, pair: usize, layer: usize, head: usize) -> f64 {
        let (o, c) = self.w(pair, layer, head);
        o - c
    }

    pub fn is_degenerate(&self, pair: usize, layer: usize, head: usize) -> bool {
        self.degenerate[self.slot(pair, layer, head)]
    }

    pub fn head_samples(&self, layer: usize, head: usize) -> Vec<f64> {
        (0..self.pairs).map(|p| self.d(p, layer, head)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadStat {
    pub layer: usize,
    pub head: usize,
    pub stat: StatResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStat {
    pub heads: Vec<(usize, usize)>,
    pub stat: StatResult,
    pub mean_w_orig: f64,
    pub mean_w_counter: f64,
}

pub fn group_compare(table: &DiffTable, heads: &[(usize, usize)], aggregation: GroupAggregation) -> Result<GroupStat> {
    if heads.is_empty() {
        return Err(Error::Statistics("empty head group".into()));
    }
    let k = heads.len() as f64;
    let samples: Vec<f64> = match aggregation {
        GroupAggregation::SentenceMean => (0..table.pairs)
            .map(|p| heads.iter().map(|&(l, h)| table.d(p, l, h)).sum::<f64>() / k)
            .collect(),
        GroupAggregation::Pooled => (0..table.pairs)
            .flat_map(|p| heads.iter().map(move |&(l, h)| table.d(p, l, h)))
            .collect(),
    };
    let count = table.pairs as f64 * k;
    let (mut so, mut sc) = (0.0, 0.0);
    for p in 0..table.pairs {
        for &(l, h) in heads {
            let (o, c) = table.w(p, l, h);
            so += o;
            sc += c;
        }
    }
    Ok(GroupStat {
        heads: heads.to_vec(),
        stat: head_ttest(&samples)?,
        mean_w_orig: so / count,
        mean_w_counter: sc / count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabOptions {
    pub pairs: usize,
    pub seed: u64,
    pub aggregation: GroupAggregation,
}

impl Default for LabOptions {
    fn default() -> Self {
        Self {
            pairs: 500,
            seed: 0,
            aggregation: GroupAggregation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabReport {
    pub options: LabOptions,
    pub pairs: Vec<StereotypePair>,
    pub table: DiffTable,
    pub heads: Vec<HeadStat>,
    /// `None` when the partition's group is empty.
    pub biased: Option<GroupStat>,
    pub regular: Option<GroupStat>,
}

/// Normalized attention of every head for each pair (original, counter).
pub fn measure_pairs<T: Scalar>(model: &Model<T>, tokenizer: &Tokenizer, pairs: &[StereotypePair]) -> Result<DiffTable> {
    let (layers, heads) = (model.config.num_layers, model.config.num_heads);
    let causal = model.is_causal();
    let rows: Vec<Vec<(f64, f64, bool)>> = pairs
        .par_iter()
        .map(|pair| {
            let side = |text: &str, target: &std::ops::Range<usize>, attr: &std::ops::Range<usize>| -> Result<Vec<AttentionValue>> {
                let enc = tokenizer.encode(text)?;
                let rows = token_span(&enc, target)?;
                let cols = token_span(&enc, attr)?;
                let out = model.forward(None, &enc.ids, true)?;
                let trace = out.attention.expect("attention requested");
                let mut values = Vec::with_capacity(layers * heads);
                for l in 0..layers {
                    for h in 0..heads {
                        values.push(attention_between(trace.head(l, h), &enc.flags, rows.clone(), cols.clone(), causal)?);
                    }
                }
                Ok(values)
            };
            let orig = side(&pair.original, &pair.target_bytes, &pair.attribute_bytes)?;
            let counter = side(&pair.counter, &pair.counter_target_bytes, &pair.counter_attribute_bytes)?;
            Ok(orig
                .iter()
                .zip(&counter)
                .map(|(o, c)| (o.value, c.value, o.degenerate || c.degenerate))
                .collect())
        })
        .collect::<Result<_>>()?;
    let flat: Vec<(f64, f64, bool)> = rows.into_iter().flatten().collect();
    Ok(DiffTable {
        pairs: pairs.len(),
        layers,
        heads,
        w_orig: flat.iter().map(|v| v.0).collect(),
        w_counter: flat.iter().map(|v| v.1).collect(),
        degenerate: flat.iter().map(|v| v.2).collect(),
    })
}

/// Mines pairs, measures every head, and tests heads and head groups.
pub fn run_counter_stereotype<T: Scalar>(
    model: &Model<T>,
    tokenizer: &Tokenizer,
    sets: &WordSets,
    corpus: &Corpus,
    partition: &HeadPartition,
    options: LabOptions,
) -> Result<LabReport> {
    let mined = mine_sentences(corpus, tokenizer, sets, options.pairs, options.seed)?;
    let pairs = make_counterparts(&mined, sets)?;
    let table = measure_pairs(model, tokenizer, &pairs)?;
    let mut heads = Vec::with_capacity(table.layers * table.heads);
    for l in 0..table.layers {
        for h in 0..table.heads {
            heads.push(HeadStat {
                layer: l,
                head: h,
                stat: head_ttest(&table.head_samples(l, h))?,
            });
        }
    }
    let group = |hs: &[(usize, usize)]| -> Result<Option<GroupStat>> {
        if hs.is_empty() {
            Ok(None)
        } else {
            group_compare(&table, hs, options.aggregation).map(Some)
        }
    };
    let biased = group(&partition.biased)?;
    let regular = group(&partition.regular)?;
    Ok(LabReport {
        options,
        pairs,
        table,
        heads,
        biased,
        regular,
    })
}

/// Tokens of `text` with the normalized attention from the target word at
/// one head, averaged over the target's tokens. Excluded columns are `None`.
pub fn attention_edges<T: Scalar>(
    model: &Model<T>,
    tokenizer: &Tokenizer,
    text: &str,
    target_bytes: &std::ops::Range<usize>,
    layer: usize,
    head: usize,
) -> Result<Vec<(String, Option<f64>)>> {
    let c = &model.config;
    if layer >= c.num_layers || head >= c.num_heads {
        return Err(Error::InvalidArgument(format!(
            "head {}-{} outside a {}x{} model",
            layer + 1,
            head + 1,
            c.num_layers,
            c.num_heads
        )));
    }
    let enc = tokenizer.encode(text)?;
    let rows = token_span(&enc, target_bytes)?;
    let out = model.forward(None, &enc.ids, true)?;
    let trace = out.attention.expect("attention requested");
    let attn = trace.head(layer, head);
    let mut acc: Vec<Option<f64>> = vec![None; enc.len()];
    for r in rows.clone() {
        let (row, _) = normalized_row(attn, &enc.flags, r, model.is_causal());
        for (a, v) in acc.iter_mut().zip(row) {
            if let Some(v) = v {
                *a = Some(a.unwrap_or(0.0) + v / rows.len() as f64);
            }
        }
    }
    Ok(enc.tokens.into_iter().zip(acc).collect())
}
