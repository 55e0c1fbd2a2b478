// SPDX-License-Identifier: MIT OR Apache-2.0

//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fail.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::time::{Duration, Instant};

use biasheads::autodiff::{Graph, ScalarParam};
use biasheads::bias::{
    classify_heads, head_bias_scores, seat_abs, BankEntry, BiasScoreOptions, EmbeddingBank, HeadPartition,
    MissingWordPolicy, WordSets,
};
use biasheads::corpus::Corpus;
use biasheads::debias::{causal_ppl, masked_seat, pppl};
use biasheads::lab::{head_ttest, run_counter_stereotype, student_t_upper_tail, GroupAggregation, LabOptions};
use biasheads::model::tokenizer::{Tokenizer, TokenizerConfig, TokenizerMode, Vocab};
use biasheads::model::{masked_multihead, HeadMaskGrid, Model, ModelConfig};
use biasheads::synthetic::{planted_bias_fixture, random_fixture, random_model, PLANTED_PAIRS, PLANTED_X, PLANTED_Y};
use biasheads::Tensor;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: u64, outcome: Outcome) -> Outcome {
    let timing = format!("{:.2} s of {limit} s", elapsed.as_secs_f64());
    match outcome {
        Ok(d) if elapsed.as_secs_f64() < limit as f64 => Ok(format!("{d}; {timing}")),
        Ok(d) => Err(format!("{d}; too slow: {timing}")),
        Err(d) => Err(format!("{d}; {timing}")),
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::tiny_encoder(2, 2, 16, 50);
    let f = random_fixture::<f32>(&cfg, 17, 20);
    let scores = head_bias_scores(&f.model, &f.tokenizer, &f.sets, &f.corpus, BiasScoreOptions::default())
        .map_err(|e| e.to_string())?;
    let reference: Model<f64> = f.model.cast();
    let eps = 1e-3;
    let mut worst: f64 = 0.0;
    for i in 0..cfg.num_head_slots() {
        let at = |delta: f64| {
            let mut v = vec![1.0; cfg.num_head_slots()];
            v[i] += delta;
            let grid = HeadMaskGrid::from_values(cfg.num_layers, cfg.num_heads, &v).unwrap();
            masked_seat(&reference, &f.tokenizer, &f.sets, &f.corpus, Some(&grid), MissingWordPolicy::Error).unwrap()
        };
        let numeric = (at(eps) - at(-eps)) / (2.0 * eps);
        let analytic = scores.scores.scores[i] as f64;
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12));
    }
    within(start.elapsed(), 10, check(worst < 1e-3, format!("max relative error {worst:.2e} (limit 1e-3)")))
}

fn masking_semantics() -> Outcome {
    let mut bitwise = true;
    let mut zero_err: f32 = 0.0;
    let mut half_err: f32 = 0.0;
    for cfg in [ModelConfig::tiny_encoder(2, 2, 16, 50), ModelConfig::tiny_decoder(2, 4, 16, 50)] {
        let model = random_model::<f32>(&cfg, 5, 0.5);
        let ids: Vec<usize> = (0..9).map(|i| (i * 7 + 3) % cfg.vocab_size).collect();
        let plain = model.forward(None, &ids, true).map_err(|e| e.to_string())?;
        bitwise &= plain == model.forward(Some(&HeadMaskGrid::for_config(&cfg)), &ids, true).unwrap();
        let dh = cfg.head_dim();
        for l in 0..cfg.num_layers {
            for h in 0..cfg.num_heads {
                let mut grid = HeadMaskGrid::for_config(&cfg);
                grid.set(l, h, 0.0).unwrap();
                let masked = model.forward(Some(&grid), &ids, false).unwrap().hidden;
                let mut zeroed = model.clone();
                let w = &mut zeroed.weights.layers[l].output.weight;
                let cols = w.shape()[1];
                w.data_mut()[h * dh * cols..(h + 1) * dh * cols].fill(0.0);
                let reference = zeroed.forward(None, &ids, false).unwrap().hidden;
                zero_err = zero_err.max(masked.max_abs_diff(&reference).unwrap());
            }
        }
        let x = Tensor::new(
            vec![6, cfg.hidden_size],
            (0..6 * cfg.hidden_size).map(|i| (i as f32 * 0.37).sin()).collect(),
        )
        .unwrap();
        for l in 0..cfg.num_layers {
            for target in 0..cfg.num_heads {
                let run = |value: f32| {
                    let mut g = Graph::new(false);
                    let masks: Vec<_> = (0..cfg.num_heads)
                        .map(|h| g.param(&ScalarParam::new(if h == target { value } else { 1.0 }, (l, h))).unwrap())
                        .collect();
                    let xn = g.constant(x.clone()).unwrap();
                    let out = masked_multihead(&mut g, &cfg, l, &model.weights.layers[l], xn, Some(&masks), None).unwrap();
                    g.value(out).clone()
                };
                let (z, half, o) = (run(0.0), run(0.5), run(1.0));
                for ((a, b), c) in z.data().iter().zip(half.data()).zip(o.data()) {
                    half_err = half_err.max((b - (a + c) / 2.0).abs());
                }
            }
        }
    }
    check(
        bitwise && zero_err <= 1e-6 && half_err <= 1e-6,
        format!("unit masks bitwise equal: {bitwise}; zero-mask error {zero_err:.1e}; midpoint error {half_err:.1e} (limit 1e-6)"),
    )
}

/// Effect size written out with plain loops.
fn brute_force_seat(x: &[Vec<f64>], y: &[Vec<f64>], a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let cos = |u: &[f64], v: &[f64]| {
        let dot: f64 = u.iter().zip(v).map(|(p, q)| p * q).sum();
        let nu: f64 = u.iter().map(|p| p * p).sum::<f64>().sqrt();
        let nv: f64 = v.iter().map(|q| q * q).sum::<f64>().sqrt();
        dot / (nu * nv)
    };
    let s = |w: &Vec<f64>| {
        a.iter().map(|v| cos(w, v)).sum::<f64>() / a.len() as f64 - b.iter().map(|v| cos(w, v)).sum::<f64>() / b.len() as f64
    };
    let sx: Vec<f64> = x.iter().map(s).collect();
    let sy: Vec<f64> = y.iter().map(s).collect();
    let all: Vec<f64> = sx.iter().chain(&sy).copied().collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let m = mean(&all);
    let sd = (all.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / all.len() as f64).sqrt();
    (mean(&sx) - mean(&sy)).abs() / sd
}

fn planted_bank(x: &[Vec<f64>], y: &[Vec<f64>], a: &[Vec<f64>], b: &[Vec<f64>]) -> (WordSets, EmbeddingBank<f64>) {
    let name = |p: &str, i: usize| format!("{p}{i}");
    let mut entries = BTreeMap::new();
    for (p, set) in [("x", x), ("y", y), ("a", a), ("b", b)] {
        for (i, v) in set.iter().enumerate() {
            entries.insert(name(p, i), BankEntry { embedding: v.clone(), occurrences: Vec::new() });
        }
    }
    let pairs: Vec<(String, String)> = (0..a.len()).map(|i| (name("a", i), name("b", i))).collect();
    let xs: Vec<String> = (0..x.len()).map(|i| name("x", i)).collect();
    let ys: Vec<String> = (0..y.len()).map(|i| name("y", i)).collect();
    let pairs: Vec<(&str, &str)> = pairs.iter().map(|(l, r)| (l.as_str(), r.as_str())).collect();
    let xs: Vec<&str> = xs.iter().map(String::as_str).collect();
    let ys: Vec<&str> = ys.iter().map(String::as_str).collect();
    let sets = WordSets::new(&pairs, &xs, &ys).unwrap();
    (sets, EmbeddingBank { entries, missing: Vec::new() })
}

fn seat_oracle() -> Outcome {
    let a = vec![vec![1.0, 0.0, 0.0]];
    let b = vec![vec![0.0, 1.0, 0.0]];
    let x = vec![vec![3.0, 0.0, 0.0], vec![0.5, 0.0, 0.0]];
    let y = vec![vec![0.0, 2.0, 0.0], vec![0.0, 0.1, 0.0]];
    let (sets, bank) = planted_bank(&x, &y, &a, &b);
    let two = seat_abs(&sets, &bank).map_err(|e| e.to_string())?;
    let mut worst = (two - 2.0).abs();
    for case in 0..50usize {
        let v = |k: usize, d: usize| -> Vec<f64> {
            (0..d).map(|j| ((case * 131 + k * 17 + j * 7) as f64 * 0.61).sin() + 0.05 * j as f64).collect()
        };
        let n = 2 + case % 4;
        let d = 3 + case % 6;
        let x: Vec<_> = (0..n).map(|k| v(k, d)).collect();
        let y: Vec<_> = (0..n).map(|k| v(100 + k, d)).collect();
        let a: Vec<_> = (0..1 + case % 3).map(|k| v(200 + k, d)).collect();
        let b: Vec<_> = (0..1 + case % 3).map(|k| v(300 + k, d)).collect();
        let (sets, bank) = planted_bank(&x, &y, &a, &b);
        let got = seat_abs(&sets, &bank).map_err(|e| e.to_string())?;
        worst = worst.max((got - brute_force_seat(&x, &y, &a, &b)).abs());
    }
    check(worst <= 1e-6, format!("SEAT=2 construction gives {two}; max deviation over 51 banks {worst:.1e} (limit 1e-6)"))
}

fn planted_detection() -> Outcome {
    let start = Instant::now();
    let f = planted_bias_fixture::<f32>(7, 240);
    let scores = head_bias_scores(&f.model, &f.tokenizer, &f.sets, &f.corpus, BiasScoreOptions::default())
        .map_err(|e| e.to_string())?;
    let top = scores
        .scores
        .iter()
        .max_by(|p, q| p.1.partial_cmp(&q.1).unwrap())
        .unwrap();
    let partition = classify_heads(&scores.scores);
    let lab = run_counter_stereotype(
        &f.model,
        &f.tokenizer,
        &f.sets,
        &f.corpus,
        &partition,
        LabOptions { pairs: 200, ..Default::default() },
    )
    .map_err(|e| e.to_string())?;
    let p = |g: &Option<biasheads::lab::GroupStat>| g.as_ref().map(|g| g.stat.p_value).unwrap_or(f64::NAN);
    let (pb, pr) = (p(&lab.biased), p(&lab.regular));
    let ok = Some(top.0) == f.planted && top.1 > 0.0 && pb < 0.05 && pr > 0.05;
    within(
        start.elapsed(),
        60,
        check(
            ok,
            format!(
                "top head {}-{} score {:.3}; biased p {pb:.1e}, regular p {pr:.3} over 200 pairs",
                top.0 .0 + 1,
                top.0 .1 + 1,
                top.1
            ),
        ),
    )
}

fn statistics_oracle() -> Outcome {
    // upper tail of Student t at 2*sqrt(3), df 2, from mpmath at 50 digits
    const ORACLE: f64 = 0.037_089_950_113_724_27;
    let r = head_ttest(&[1.0, 2.0, 3.0]).map_err(|e| e.to_string())?;
    let mut asym: f64 = 0.0;
    for i in 0..200 {
        let t = -40.0 + 0.4 * i as f64 + 0.013;
        for df in [0.5, 1.0, 2.0, 3.7, 10.0, 30.0, 499.0] {
            asym = asym.max((student_t_upper_tail(t, df).unwrap() + student_t_upper_tail(-t, df).unwrap() - 1.0).abs());
        }
    }
    let ok = (r.t_stat - 3.4641).abs() < 1e-4 && (r.p_value - ORACLE).abs() < 1e-4 && asym <= 1e-10;
    check(ok, format!("t {:.5}, p {:.10} vs {ORACLE:.10}; max |p(t)+p(-t)-1| {asym:.1e}", r.t_stat, r.p_value))
}

fn constant_logits(cfg: &ModelConfig, favourite: Option<usize>) -> Model<f32> {
    let mut m = random_model::<f32>(cfg, 4, 0.5);
    let head = m.weights.lm_head.as_mut().unwrap();
    head.decoder.weight.data_mut().fill(0.0);
    for (i, b) in head.decoder.bias.data_mut().iter_mut().enumerate() {
        *b = if Some(i) == favourite { 100.0 } else { 0.0 };
    }
    m
}

fn pppl_sanity() -> Outcome {
    let v = 50;
    let mut tokens = vec!["[UNK]".to_string(), "[CLS]".into(), "[SEP]".into(), "[MASK]".into()];
    tokens.extend((4..v).map(|i| format!("t{i}")));
    let tokenizer = |cfg: &ModelConfig| {
        Tokenizer::new(
            Vocab::from_tokens(tokens.clone()).unwrap(),
            None,
            TokenizerConfig::for_model(cfg, TokenizerMode::WordPiece),
        )
        .unwrap()
    };
    let enc = ModelConfig::tiny_encoder(2, 2, 16, v);
    let dec = ModelConfig::tiny_decoder(2, 2, 16, v);
    let varied = Corpus::new(["t5 t6 t7", "t9 t5", "t8 t8 t8 t10 t11"]);
    let same = Corpus::new(["t5 t5 t5", "t5", "t5 t5"]);
    let run = |cfg: &ModelConfig, fav, corpus: &Corpus| {
        let m = constant_logits(cfg, fav);
        if m.is_causal() {
            causal_ppl(&m, &tokenizer(cfg), None, corpus)
        } else {
            pppl(&m, &tokenizer(cfg), None, corpus)
        }
        .map(|p| p.value)
    };
    let err = |e: biasheads::Error| e.to_string();
    let uniform = run(&enc, None, &varied).map_err(err)?;
    let uniform_dec = run(&dec, None, &varied).map_err(err)?;
    let certain = run(&enc, Some(5), &same).map_err(err)?;
    let certain_dec = run(&dec, Some(5), &same).map_err(err)?;
    let rel = ((uniform - v as f64) / v as f64).abs().max(((uniform_dec - v as f64) / v as f64).abs());
    check(
        rel <= 1e-3 && certain == 1.0 && certain_dec == 1.0,
        format!("uniform {uniform} and {uniform_dec} for vocab {v}; certain {certain} and {certain_dec}"),
    )
}

fn attention_invariants() -> Outcome {
    let mut worst: f32 = 0.0;
    let mut upper_zero = true;
    for (seed, cfg) in [
        ModelConfig::tiny_encoder(2, 2, 16, 50),
        ModelConfig::tiny_decoder(2, 4, 16, 50),
        ModelConfig::tiny_decoder(3, 2, 32, 50),
    ]
    .into_iter()
    .enumerate()
    {
        for n in [1, 5, 17, 40] {
            let model = random_model::<f32>(&cfg, seed as u64 + 40, 1.5);
            let ids: Vec<usize> = (0..n).map(|i| (i * 11 + seed) % cfg.vocab_size).collect();
            let trace = model.forward(None, &ids, true).map_err(|e| e.to_string())?.attention.unwrap();
            for layer in &trace.layers {
                for a in layer {
                    for r in 0..n {
                        worst = worst.max((a.row(r).iter().sum::<f32>() - 1.0).abs());
                        if model.is_causal() {
                            upper_zero &= a.row(r)[r + 1..].iter().all(|&v| v == 0.0);
                        }
                    }
                }
            }
        }
    }
    let f = planted_bias_fixture::<f32>(3, 220);
    let pairs: Vec<(&str, &str)> = PLANTED_PAIRS.iter().flat_map(|(a, b)| [(*a, *a), (*b, *b)]).collect();
    let sets = WordSets::new(&pairs, &PLANTED_X, &PLANTED_Y).unwrap();
    let partition = HeadPartition { biased: vec![(0, 2), (0, 0)], regular: vec![(0, 1), (0, 3)] };
    let lab = run_counter_stereotype(
        &f.model,
        &f.tokenizer,
        &sets,
        &f.corpus,
        &partition,
        LabOptions { pairs: 200, seed: 1, aggregation: GroupAggregation::SentenceMean },
    )
    .map_err(|e| e.to_string())?;
    let zero_d = lab.table.w_orig.iter().zip(&lab.table.w_counter).all(|(o, c)| o - c == 0.0);
    let zero_t = lab.heads.iter().all(|h| h.stat.t_stat == 0.0)
        && [&lab.biased, &lab.regular].iter().all(|g| g.as_ref().is_some_and(|g| g.stat.t_stat == 0.0));
    check(
        worst <= 1e-5 && upper_zero && zero_d && zero_t,
        format!("max row-sum error {worst:.1e}; causal upper triangle zero: {upper_zero}; identity pairs d=0: {zero_d}, t=0: {zero_t}"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let f = common::planted_files(dir.path(), 240);
    let mut compared = 0;
    let mut differing = Vec::new();
    let bias_csv = dir.path().join("run0-bias").join("bias_scores.csv");
    let bias_csv = common::path(&bias_csv).to_string();
    for (command, extra) in [
        ("bias-scores", vec![]),
        ("counter-stereotype", vec!["--bias-csv", bias_csv.as_str(), "--pairs", "200", "--seed", "11"]),
    ] {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("run{run}-{}", &command[..4]));
            let result = common::run(command, &f, &out, &extra);
            if !result.status.success() {
                return Err(format!("{command} failed: {}", String::from_utf8_lossy(&result.stderr).trim()));
            }
            outputs.push(out);
        }
        for file in common::files_in(&outputs[0]) {
            let name = file.file_name().unwrap();
            if !matches!(file.extension().and_then(|e| e.to_str()), Some("csv" | "json")) || name == "run_manifest.json" {
                continue;
            }
            compared += 1;
            if fs::read(&file).ok() != fs::read(outputs[1].join(name)).ok() {
                differing.push(name.to_string_lossy().into_owned());
            }
        }
    }
    check(
        differing.is_empty() && compared >= 8,
        format!("{compared} CSV/JSON files compared across two runs, differing: {differing:?}"),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradient correctness", gradient_correctness),
        ("masking semantics", masking_semantics),
        ("SEAT oracle", seat_oracle),
        ("planted-bias detection", planted_detection),
        ("statistics oracle", statistics_oracle),
        ("PPPL sanity", pppl_sanity),
        ("attention invariants", attention_invariants),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
