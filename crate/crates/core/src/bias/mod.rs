// SPDX-License-Identifier: MIT OR Apache-2.0

//! Head bias scores: the gradient of the |SEAT| effect size with respect to
//! each head's mask scalar.

pub mod bank;
pub mod scores;
pub mod seat;
pub mod wordsets;

pub use bank::{build_embedding_bank, BankEntry, EmbeddingBank, MissingWordPolicy, Occurrence, WordOccurrences};
pub use scores::{
    classify_heads, head_bias_scores, BiasScoreMap, BiasScoreOptions, BiasScoreResult, GradientMode, HeadPartition,
};
pub use seat::{assoc_s, seat_abs, seat_from_embeddings};
pub use wordsets::{WordListFile, WordSets};
