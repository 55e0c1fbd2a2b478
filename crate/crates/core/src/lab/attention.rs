// SPDX-License-Identifier: MIT OR Apache-2.0

use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::tokenizer::{EncodedSentence, TokenFlag};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Token range covering every word inside the byte range.
pub fn token_span(enc: &EncodedSentence, bytes: &Range<usize>) -> Result<Range<usize>> {
    let spans: Vec<&Range<usize>> = enc
        .words
        .iter()
        .zip(&enc.word_spans)
        .filter(|(w, _)| w.start >= bytes.start && w.end <= bytes.end)
        .map(|(_, s)| s)
        .collect();
    match (spans.first(), spans.last()) {
        (Some(first), Some(last)) if first.start < last.end => Ok(first.start..last.end),
        _ => Err(Error::InvalidArgument(format!(
            "byte range {bytes:?} covers no tokens"
        ))),
    }
}

/// Min-max normalized attention row; `None` marks excluded columns
/// (special, punctuation, and for causal models the future). The flag is
/// set when the kept values are all equal, in which case they become 0.
pub fn normalized_row<T: Scalar>(
    attn: &Tensor<T>,
    flags: &[TokenFlag],
    row: usize,
    causal: bool,
) -> (Vec<Option<f64>>, bool) {
    let values = attn.row(row);
    let kept: Vec<Option<f64>> = values
        .iter()
        .enumerate()
        .map(|(c, v)| {
            let visible = !causal || c <= row;
            (flags[c] == TokenFlag::Regular && visible).then(|| v.to_f64_lossless())
        })
        .collect();
    let present = kept.iter().flatten();
    let min = present.clone().copied().fold(f64::INFINITY, f64::min);
    let max = present.copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return (kept.iter().map(|k| k.map(|_| 0.0)).collect(), true);
    }
    (
        kept.iter().map(|k| k.map(|v| (v - min) / (max - min))).collect(),
        false,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionValue {
    pub value: f64,
    /// Some target row had no spread among kept columns.
    pub degenerate: bool,
}

/// Normalized attention from the target rows to the attribute columns,
/// averaged over both spans. Attribute columns excluded from a row count
/// as 0.
pub fn attention_between<T: Scalar>(
    attn: &Tensor<T>,
    flags: &[TokenFlag],
    target: Range<usize>,
    attribute: Range<usize>,
    causal: bool,
) -> Result<AttentionValue> {
    let n = flags.len();
    if attn.shape() != [n, n] {
        return Err(Error::InvalidShape {
            op: "attention_between",
            message: format!("attention {:?} for {n} tokens", attn.shape()),
        });
    }
    if target.is_empty() || attribute.is_empty() || target.end > n || attribute.end > n {
        return Err(Error::InvalidArgument(format!(
            "invalid spans target {target:?}, attribute {attribute:?} for {n} tokens"
        )));
    }
    let mut total = 0.0;
    let mut degenerate = false;
    for r in target.clone() {
        let (row, flat) = normalized_row(attn, flags, r, causal);
        degenerate |= flat;
        for c in attribute.clone() {
            total += row[c].unwrap_or(0.0);
        }
    }
    Ok(AttentionValue {
        value: total / (target.len() * attribute.len()) as f64,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(n: usize) -> Vec<TokenFlag> {
        vec![TokenFlag::Regular; n]
    }

    #[test]
    fn maximum_column_normalizes_to_one() {
        let attn = Tensor::matrix(3, 3, vec![0.1, 0.2, 0.7, 0.1, 0.2, 0.7, 0.1, 0.2, 0.7]).unwrap();
        let v = attention_between(&attn, &flags(3), 0..1, 2..3, false).unwrap();
        assert_eq!(v.value, 1.0);
        assert!(!v.degenerate);
    }

    #[test]
    fn uniform_row_is_zero_and_flagged() {
        let attn = Tensor::full(&[4, 4], 0.25f64);
        let v = attention_between(&attn, &flags(4), 1..2, 3..4, false).unwrap();
        assert_eq!(v.value, 0.0);
        assert!(v.degenerate);
    }

    #[test]
    fn special_and_punctuation_columns_are_dropped() {
        let attn = Tensor::matrix(1, 4, vec![0.9f64, 0.02, 0.06, 0.02]).unwrap();
        let attn = Tensor::new(vec![4, 4], attn.data().repeat(4)).unwrap();
        let f = [TokenFlag::Special, TokenFlag::Regular, TokenFlag::Regular, TokenFlag::Punctuation];
        let v = attention_between(&attn, &f, 1..2, 2..3, false).unwrap();
        assert_eq!(v.value, 1.0);
    }
}
