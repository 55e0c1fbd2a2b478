// SPDX-License-Identifier: MIT OR Apache-2.0

use biasheads::bias::{
    assoc_s, build_embedding_bank, head_bias_scores, seat_abs, seat_from_embeddings, BiasScoreOptions, GradientMode,
    MissingWordPolicy, WordOccurrences, WordSets,
};
use biasheads::corpus::Corpus;
use biasheads::debias::masked_seat;
use biasheads::model::{HeadMaskGrid, ModelConfig};
use biasheads::synthetic::{planted_bias_fixture, random_fixture};
use biasheads::Error;
use proptest::prelude::*;

/// Textbook effect size, written out with plain loops.
fn brute_force_seat(x: &[Vec<f64>], y: &[Vec<f64>], a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    fn cos(u: &[f64], v: &[f64]) -> f64 {
        let mut dot = 0.0;
        let mut nu = 0.0;
        let mut nv = 0.0;
        for i in 0..u.len() {
            dot += u[i] * v[i];
            nu += u[i] * u[i];
            nv += v[i] * v[i];
        }
        dot / (nu.sqrt() * nv.sqrt())
    }
    let s = |w: &Vec<f64>| {
        let mut sa = 0.0;
        for v in a {
            sa += cos(w, v);
        }
        let mut sb = 0.0;
        for v in b {
            sb += cos(w, v);
        }
        sa / a.len() as f64 - sb / b.len() as f64
    };
    let sx: Vec<f64> = x.iter().map(s).collect();
    let sy: Vec<f64> = y.iter().map(s).collect();
    let mx = sx.iter().sum::<f64>() / sx.len() as f64;
    let my = sy.iter().sum::<f64>() / sy.len() as f64;
    let all: Vec<f64> = sx.iter().chain(&sy).copied().collect();
    let m = all.iter().sum::<f64>() / all.len() as f64;
    let var = all.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / all.len() as f64;
    (mx - my).abs() / var.sqrt()
}

#[test]
fn orthogonal_construction_gives_two() {
    let a = vec![vec![1.0, 0.0, 0.0]];
    let b = vec![vec![0.0, 1.0, 0.0]];
    let x = vec![vec![3.0, 0.0, 0.0], vec![0.5, 0.0, 0.0]];
    let y = vec![vec![0.0, 2.0, 0.0], vec![0.0, 0.1, 0.0]];
    assert_eq!(brute_force_seat(&x, &y, &a, &b), 2.0);
    assert!((seat_from_embeddings(&x, &y, &a, &b).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn hand_computed_association() {
    // cos to (1,0) is 0.6 and to (0,1) is 0.8 for (3,4)
    let s: f64 = assoc_s(&[3.0, 4.0], &[vec![1.0, 0.0]], &[vec![0.0, 1.0]]).unwrap();
    assert!((s - (0.6 - 0.8)).abs() < 1e-12);
}

fn bank(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d).prop_map(|mut v| {
        v[0] += 1.5;
        v
    }), n)
}

fn sets() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1usize..5, 1usize..4, 2usize..6)
        .prop_flat_map(|(t, k, d)| (bank(t, d), bank(t, d), bank(k, d), bank(k + 1, d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matches_brute_force((x, y, a, b) in sets()) {
        let want = brute_force_seat(&x, &y, &a, &b);
        prop_assume!(want.is_finite());
        let got = seat_from_embeddings(&x, &y, &a, &b).unwrap();
        prop_assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn symmetric_under_swaps((x, y, a, b) in sets()) {
        prop_assume!(brute_force_seat(&x, &y, &a, &b).is_finite());
        let base = seat_from_embeddings(&x, &y, &a, &b).unwrap();
        let swapped_targets = seat_from_embeddings(&y, &x, &a, &b).unwrap();
        let swapped_attrs = seat_from_embeddings(&x, &y, &b, &a).unwrap();
        prop_assert!((base - swapped_targets).abs() < 1e-9);
        prop_assert!((base - swapped_attrs).abs() < 1e-9);
    }

    #[test]
    fn invariant_to_embedding_scale((x, y, a, b) in sets(), c in 0.1f64..10.0) {
        prop_assume!(brute_force_seat(&x, &y, &a, &b).is_finite());
        let scale = |s: &[Vec<f64>]| s.iter().map(|v| v.iter().map(|e| e * c).collect()).collect::<Vec<Vec<f64>>>();
        let base = seat_from_embeddings(&x, &y, &a, &b).unwrap();
        let scaled = seat_from_embeddings(&scale(&x), &scale(&y), &scale(&a), &scale(&b)).unwrap();
        prop_assert!((base - scaled).abs() < 1e-9);
    }

    #[test]
    fn bounded_by_two((x, y, a, b) in sets()) {
        prop_assume!(brute_force_seat(&x, &y, &a, &b).is_finite());
        let v = seat_from_embeddings(&x, &y, &a, &b).unwrap();
        prop_assert!((0.0..=2.0 + 1e-9).contains(&v));
    }
}

#[test]
fn gradient_modes_agree() {
    let cfg = ModelConfig::tiny_encoder(2, 2, 16, 50);
    let f = random_fixture::<f64>(&cfg, 3, 20);
    let single = head_bias_scores(&f.model, &f.tokenizer, &f.sets, &f.corpus, BiasScoreOptions::default()).unwrap();
    let chunked = head_bias_scores(
        &f.model,
        &f.tokenizer,
        &f.sets,
        &f.corpus,
        BiasScoreOptions { mode: GradientMode::Chunked, ..Default::default() },
    )
    .unwrap();
    assert_eq!(single.seat, chunked.seat);
    for (s, c) in single.scores.scores.iter().zip(&chunked.scores.scores) {
        assert!((s - c).abs() <= 1e-12 * s.abs().max(1.0), "{s} vs {c}");
    }
}

#[test]
fn scores_match_finite_differences_for_both_precisions() {
    let cfg = ModelConfig::tiny_encoder(2, 2, 16, 50);
    let f = random_fixture::<f64>(&cfg, 17, 20);
    let model32 = f.model.cast::<f32>();
    let r64 = head_bias_scores(&f.model, &f.tokenizer, &f.sets, &f.corpus, BiasScoreOptions::default()).unwrap();
    let r32 = head_bias_scores(&model32, &f.tokenizer, &f.sets, &f.corpus, BiasScoreOptions::default()).unwrap();
    let eps = 1e-3;
    for i in 0..4 {
        let at = |delta: f64| {
            let mut v = vec![1.0; 4];
            v[i] += delta;
            let grid = HeadMaskGrid::from_values(2, 2, &v).unwrap();
            masked_seat(&f.model, &f.tokenizer, &f.sets, &f.corpus, Some(&grid), MissingWordPolicy::Error).unwrap()
        };
        let numeric = (at(eps) - at(-eps)) / (2.0 * eps);
        for analytic in [r64.scores.scores[i], r32.scores.scores[i] as f64] {
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-3, "head {i}: {analytic} vs {numeric}");
        }
    }
}

#[test]
fn seat_value_matches_bank_seat() {
    let cfg = ModelConfig::tiny_encoder(2, 2, 16, 50);
    let f = random_fixture::<f32>(&cfg, 4, 20);
    let r = head_bias_scores(&f.model, &f.tokenizer, &f.sets, &f.corpus, BiasScoreOptions::default()).unwrap();
    let occ = WordOccurrences::scan(&f.corpus, &f.tokenizer, &f.sets.all_words()).unwrap();
    let bank = build_embedding_bank(&f.model, None, &occ).unwrap();
    assert_eq!(seat_abs(&f.sets, &bank).unwrap(), r.seat);
}

#[test]
fn missing_words_are_named_or_skipped() {
    let cfg = ModelConfig::tiny_encoder(1, 2, 16, 50);
    let f = random_fixture::<f64>(&cfg, 5, 20);
    let sets = WordSets::new(
        &[("she", "he"), ("woman", "man"), ("unseen", "absent")],
        &["nurse", "dancer"],
        &["engineer", "pilot"],
    )
    .unwrap();
    let err = head_bias_scores(&f.model, &f.tokenizer, &sets, &f.corpus, BiasScoreOptions::default()).unwrap_err();
    match err {
        Error::MissingWords(w) => assert_eq!(w, ["absent", "unseen"]),
        other => panic!("{other}"),
    }
    let skip = BiasScoreOptions { missing: MissingWordPolicy::Skip, ..Default::default() };
    let r = head_bias_scores(&f.model, &f.tokenizer, &sets, &f.corpus, skip).unwrap();
    assert_eq!(r.sets.a, ["she", "woman"]);
}

#[test]
fn planted_head_gets_the_top_positive_score() {
    let f = planted_bias_fixture::<f32>(7, 240);
    let r = head_bias_scores(&f.model, &f.tokenizer, &f.sets, &f.corpus, BiasScoreOptions::default()).unwrap();
    let p = biasheads::bias::classify_heads(&r.scores);
    assert_eq!(p.biased.first().copied(), f.planted);
}

#[test]
fn whole_words_match_case_insensitively() {
    let cfg = ModelConfig::tiny_encoder(1, 2, 16, 50);
    let f = random_fixture::<f64>(&cfg, 5, 0);
    let corpus = Corpus::new(["She nurse w1", "he PILOT", "woman dancer man engineer"]);
    let occ = WordOccurrences::scan(&corpus, &f.tokenizer, &f.sets.all_words()).unwrap();
    let hits: Vec<usize> = occ.sentences.iter().map(|s| s.2.len()).collect();
    assert_eq!(hits, [2, 2, 4]);
}

#[test]
fn word_list_json_file_is_parsed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("words.json");
    std::fs::write(&path, r#"{"attribute_pairs": [["she", "he"]], "targets_X": ["nurse"], "targets_Y": ["pilot"]}"#).unwrap();
    let s = WordSets::from_path(&path).unwrap();
    assert_eq!(s.counterpart("he"), Some("she"));
    std::fs::write(&path, r#"{"attribute_pairs": []}"#).unwrap();
    assert!(WordSets::from_path(&path).is_err());
}
