// SPDX-License-Identifier: MIT OR Apache-2.0

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bias::WordSets;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::tokenizer::{Tokenizer, Word};

/// A corpus sentence with exactly one attribute word and one target word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MinedSentence {
    pub sentence: usize,
    pub text: String,
    /// Byte range of the attribute word.
    pub attribute: Range<usize>,
    pub target: Range<usize>,
}

/// An original sentence and its attribute-substituted counterpart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StereotypePair {
    pub sentence: usize,
    pub original: String,
    pub counter: String,
    /// Attribute word as written in the original.
    pub attribute: String,
    /// Replacement as written in the counter sentence.
    pub counterpart: String,
    /// Byte ranges in the original.
    pub attribute_bytes: Range<usize>,
    pub target_bytes: Range<usize>,
    /// Byte ranges in the counter sentence.
    pub counter_attribute_bytes: Range<usize>,
    pub counter_target_bytes: Range<usize>,
    pub target: String,
}

fn qualifies(words: &[Word], sets: &WordSets) -> Option<(Range<usize>, Range<usize>)> {
    let attributes = sets.attributes();
    let targets = sets.targets();
    let mut attr = Vec::new();
    let mut tgt = Vec::new();
    for w in words {
        let lower = w.text.to_lowercase();
        if attributes.contains(&lower) {
            attr.push(w.start..w.end);
        }
        if targets.contains(&lower) {
            tgt.push(w.start..w.end);
        }
    }
    (attr.len() == 1 && tgt.len() == 1 && attr[0] != tgt[0]).then(|| (attr.remove(0), tgt.remove(0)))
}

/// Selects `n` qualifying sentences by a seeded shuffle then truncation.
pub fn mine_sentences(
    corpus: &Corpus,
    tokenizer: &Tokenizer,
    sets: &WordSets,
    n: usize,
    seed: u64,
) -> Result<Vec<MinedSentence>> {
    let mut found: Vec<MinedSentence> = corpus
        .sentences()
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            qualifies(&tokenizer.words(s), sets).map(|(attribute, target)| MinedSentence {
                sentence: i,
                text: s.clone(),
                attribute,
                target,
            })
        })
        .collect();
    if found.len() < n {
        return Err(Error::Corpus(format!(
            "requested {n} sentences with exactly one attribute and one target word, found {}",
            found.len()
        )));
    }
    found.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    found.truncate(n);
    Ok(found)
}

/// `replacement` with the first letter's case taken from `original`.
pub fn match_case(original: &str, replacement: &str) -> String {
    let upper = original.chars().next().is_some_and(char::is_uppercase);
    let mut chars = replacement.chars();
    match chars.next() {
        Some(first) if upper => first.to_uppercase().chain(chars).collect(),
        Some(first) => first.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub fn make_counterparts(mined: &[MinedSentence], sets: &WordSets) -> Result<Vec<StereotypePair>> {
    mined
        .iter()
        .map(|m| {
            let attribute = &m.text[m.attribute.clone()];
            let counterpart = sets.counterpart(attribute).ok_or_else(|| {
                Error::WordLists(format!("attribute `{attribute}` has no counterpart"))
            })?;
            let counterpart = match_case(attribute, counterpart);
            let counter = format!(
                "{}{}{}",
                &m.text[..m.attribute.start],
                counterpart,
                &m.text[m.attribute.end..]
            );
            let counter_attribute_bytes = m.attribute.start..m.attribute.start + counterpart.len();
            let shift = |r: &Range<usize>| {
                if r.start >= m.attribute.end {
                    let delta = counterpart.len() as isize - attribute.len() as isize;
                    (r.start as isize + delta) as usize..(r.end as isize + delta) as usize
                } else {
                    r.clone()
                }
            };
            Ok(StereotypePair {
                sentence: m.sentence,
                original: m.text.clone(),
                attribute: attribute.to_string(),
                target: m.text[m.target.clone()].to_string(),
                counter_target_bytes: shift(&m.target),
                counter,
                counterpart,
                attribute_bytes: m.attribute.clone(),
                target_bytes: m.target.clone(),
                counter_attribute_bytes,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_follows_the_first_letter() {
        assert_eq!(match_case("Black", "white"), "White");
        assert_eq!(match_case("men", "women"), "women");
    }
}
