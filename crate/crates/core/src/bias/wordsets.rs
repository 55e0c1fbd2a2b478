// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-disk word-list format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordListFile {
    pub attribute_pairs: Vec<[String; 2]>,
    #[serde(rename = "targets_X")]
    pub targets_x: Vec<String>,
    #[serde(rename = "targets_Y")]
    pub targets_y: Vec<String>,
}

/// Target sets X, Y and attribute sets A, B with the counterpart map.
///
/// X is stereotypically associated with A and Y with B. All words are
/// stored lowercased.
#[derive(Debug, Clone, PartialEq)]
pub struct WordSets {
    pub x: Vec<String>,
    pub y: Vec<String>,
    pub a: Vec<String>,
    pub b: Vec<String>,
    pair_map: HashMap<String, String>,
}

fn normalize(word: &str) -> Result<String> {
    let w = word.trim().to_lowercase();
    if w.is_empty() || w.chars().any(char::is_whitespace) {
        return Err(Error::WordLists(format!("`{word}` is not a single word")));
    }
    Ok(w)
}

fn dedup(words: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = HashSet::new();
    words.into_iter().filter(|w| seen.insert(w.clone())).collect()
}

impl WordSets {
    pub fn new<S: AsRef<str>>(pairs: &[(S, S)], x: &[S], y: &[S]) -> Result<Self> {
        let mut pair_map = HashMap::new();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (left, right) in pairs {
            let (l, r) = (normalize(left.as_ref())?, normalize(right.as_ref())?);
            for (from, to) in [(&l, &r), (&r, &l)] {
                match pair_map.get(from) {
                    Some(existing) if existing != to => {
                        return Err(Error::WordLists(format!(
                            "`{from}` is paired with both `{existing}` and `{to}`"
                        )))
                    }
                    _ => {
                        pair_map.insert(from.clone(), to.clone());
                    }
                }
            }
            a.push(l);
            b.push(r);
        }
        let x = dedup(x.iter().map(|w| normalize(w.as_ref())).collect::<Result<Vec<_>>>()?);
        let y = dedup(y.iter().map(|w| normalize(w.as_ref())).collect::<Result<Vec<_>>>()?);
        let sets = Self {
            x,
            y,
            a: dedup(a),
            b: dedup(b),
            pair_map,
        };
        sets.validate()?;
        Ok(sets)
    }

    fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() {
            return Err(Error::WordLists(format!(
                "target sets differ in size: |X| = {}, |Y| = {}",
                self.x.len(),
                self.y.len()
            )));
        }
        if self.x.is_empty() {
            return Err(Error::WordLists("target sets are empty".into()));
        }
        if self.a.is_empty() || self.b.is_empty() {
            return Err(Error::WordLists("attribute sets are empty".into()));
        }
        Ok(())
    }

    pub fn from_file_struct(file: &WordListFile) -> Result<Self> {
        let pairs: Vec<(&str, &str)> = file
            .attribute_pairs
            .iter()
            .map(|[l, r]| (l.as_str(), r.as_str()))
            .collect();
        let x: Vec<&str> = file.targets_x.iter().map(String::as_str).collect();
        let y: Vec<&str> = file.targets_y.iter().map(String::as_str).collect();
        Self::new(&pairs, &x, &y)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WordListFile =
            serde_json::from_str(text).map_err(|e| Error::WordLists(format!("invalid JSON: {e}")))?;
        Self::from_file_struct(&file)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// On-disk form; pairs follow the order of A.
    pub fn to_file_struct(&self) -> WordListFile {
        WordListFile {
            attribute_pairs: self.a.iter().map(|w| [w.clone(), self.pair_map[w].clone()]).collect(),
            targets_x: self.x.clone(),
            targets_y: self.y.clone(),
        }
    }

    /// Counterpart of an attribute word (lowercased lookup).
    pub fn counterpart(&self, attribute: &str) -> Option<&str> {
        self.pair_map.get(&attribute.to_lowercase()).map(String::as_str)
    }

    pub fn is_attribute(&self, word: &str) -> bool {
        self.pair_map.contains_key(word)
    }

    pub fn attributes(&self) -> HashSet<String> {
        self.a.iter().chain(&self.b).cloned().collect()
    }

    pub fn targets(&self) -> HashSet<String> {
        self.x.iter().chain(&self.y).cloned().collect()
    }

    pub fn all_words(&self) -> HashSet<String> {
        self.attributes().into_iter().chain(self.targets()).collect()
    }

    /// Same sets with (X, A) and (Y, B) exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            x: self.y.clone(),
            y: self.x.clone(),
            a: self.b.clone(),
            b: self.a.clone(),
            pair_map: self.pair_map.clone(),
        }
    }

    /// Keeps only words in `present`; errors if a set becomes empty.
    pub fn restricted_to(&self, present: &HashSet<String>) -> Result<Self> {
        let keep = |v: &[String]| v.iter().filter(|w| present.contains(*w)).cloned().collect::<Vec<_>>();
        let out = Self {
            x: keep(&self.x),
            y: keep(&self.y),
            a: keep(&self.a),
            b: keep(&self.b),
            pair_map: self.pair_map.clone(),
        };
        for (kept, full) in [(&out.x, &self.x), (&out.y, &self.y), (&out.a, &self.a), (&out.b, &self.b)] {
            if kept.is_empty() {
                return Err(Error::MissingWords(full.clone()));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_json_format() {
        let ws = WordSets::from_json(
            r#"{"attribute_pairs": [["Women", "men"], ["she", "he"]],
                "targets_X": ["emotional"], "targets_Y": ["strong"]}"#,
        )
        .unwrap();
        assert_eq!(ws.a, ["women", "she"]);
        assert_eq!(ws.b, ["men", "he"]);
        assert_eq!(ws.counterpart("Men"), Some("women"));
        assert_eq!(ws.counterpart("she"), Some("he"));
    }

    #[test]
    fn unequal_target_sets_are_rejected() {
        let err = WordSets::new(&[("a", "b")], &["x1", "x2"], &["y"]).unwrap_err();
        assert!(err.to_string().contains("|X| = 2"));
    }

    #[test]
    fn conflicting_pairs_are_rejected() {
        assert!(WordSets::new(&[("a", "b"), ("a", "c")], &["x"], &["y"]).is_err());
    }

    #[test]
    fn identity_pairs_are_allowed() {
        let ws = WordSets::new(&[("a", "a")], &["x"], &["y"]).unwrap();
        assert_eq!(ws.counterpart("a"), Some("a"));
    }
}
