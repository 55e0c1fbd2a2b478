// SPDX-License-Identifier: MIT OR Apache-2.0

use biasheads::autodiff::{Graph, ScalarParam};
use biasheads::model::{masked_multihead, AttentionTrace, HeadMaskGrid, Model, ModelConfig};
use biasheads::synthetic::random_model;
use biasheads::Tensor;
use proptest::prelude::*;

fn ids(n: usize, vocab: usize, seed: usize) -> Vec<usize> {
    (0..n).map(|i| (i * 7 + seed * 13 + 3) % vocab).collect()
}

fn configs() -> Vec<ModelConfig> {
    vec![
        ModelConfig::tiny_encoder(2, 2, 16, 50),
        ModelConfig::tiny_decoder(2, 4, 16, 50),
    ]
}

/// Copy of the model with head `(layer, head)`'s rows of the output
/// projection set to zero.
fn zero_head_rows(model: &Model<f32>, layer: usize, head: usize) -> Model<f32> {
    let mut m = model.clone();
    let dh = m.config.head_dim();
    let w = &mut m.weights.layers[layer].output.weight;
    let cols = w.shape()[1];
    for r in head * dh..(head + 1) * dh {
        w.data_mut()[r * cols..(r + 1) * cols].fill(0.0);
    }
    m
}

#[test]
fn unit_masks_match_the_unmasked_forward_bitwise() {
    for cfg in configs() {
        let model = random_model::<f32>(&cfg, 11, 0.5);
        let x = ids(9, cfg.vocab_size, 1);
        let plain = model.forward(None, &x, true).unwrap();
        let ones = model.forward(Some(&HeadMaskGrid::for_config(&cfg)), &x, true).unwrap();
        assert_eq!(plain, ones);
    }
}

#[test]
fn zero_mask_matches_zeroed_output_rows() {
    for cfg in configs() {
        let model = random_model::<f32>(&cfg, 5, 0.5);
        let x = ids(8, cfg.vocab_size, 2);
        for l in 0..cfg.num_layers {
            for h in 0..cfg.num_heads {
                let mut masks = HeadMaskGrid::for_config(&cfg);
                masks.set(l, h, 0.0).unwrap();
                let masked = model.forward(Some(&masks), &x, false).unwrap().hidden;
                let zeroed = zero_head_rows(&model, l, h).forward(None, &x, false).unwrap().hidden;
                let diff = masked.max_abs_diff(&zeroed).unwrap();
                assert!(diff <= 1e-6, "{} head {}-{}: {diff}", cfg.architecture, l + 1, h + 1);
            }
        }
    }
}

#[test]
fn half_mask_is_the_midpoint_of_the_attention_output() {
    for cfg in configs() {
        let model = random_model::<f32>(&cfg, 9, 0.5);
        let x = Tensor::new(vec![6, cfg.hidden_size], (0..6 * cfg.hidden_size).map(|i| ((i as f32) * 0.37).sin()).collect()).unwrap();
        let layer = &model.weights.layers[0];
        let run = |value: f32| {
            let mut g = Graph::new(false);
            let masks: Vec<_> = (0..cfg.num_heads)
                .map(|h| g.param(&ScalarParam::new(if h == 1 { value } else { 1.0 }, (0, h))).unwrap())
                .collect();
            let xn = g.constant(x.clone()).unwrap();
            let out = masked_multihead(&mut g, &cfg, 0, layer, xn, Some(&masks), None).unwrap();
            g.value(out).clone()
        };
        let (zero, half, one) = (run(0.0), run(0.5), run(1.0));
        for ((z, h), o) in zero.data().iter().zip(half.data()).zip(one.data()) {
            assert!((h - (z + o) / 2.0).abs() <= 1e-6);
        }
    }
}

#[test]
fn recording_does_not_change_forward_values() {
    for cfg in configs() {
        let model = random_model::<f32>(&cfg, 3, 0.5);
        let x = ids(7, cfg.vocab_size, 3);
        let masks = HeadMaskGrid::for_config(&cfg);
        let mut g = Graph::new(true);
        let nodes = masks.register(&mut g).unwrap();
        let mut trace = AttentionTrace { layers: Vec::new() };
        let h = model.forward_graph(&mut g, Some(&nodes), &x, Some(&mut trace)).unwrap();
        let plain = model.forward(Some(&masks), &x, true).unwrap();
        assert_eq!(g.value(h), &plain.hidden);
        assert_eq!(Some(trace), plain.attention);
    }
}

#[test]
fn causal_attention_has_an_exact_zero_upper_triangle() {
    let cfg = ModelConfig::tiny_decoder(2, 4, 16, 50);
    let model = random_model::<f32>(&cfg, 21, 1.0);
    let out = model.forward(None, &ids(10, 50, 4), true).unwrap();
    for layer in out.attention.unwrap().layers {
        for a in layer {
            let n = a.shape()[0];
            for r in 0..n {
                assert!(a.row(r)[r + 1..].iter().all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn forward_is_deterministic() {
    for cfg in configs() {
        let model = random_model::<f32>(&cfg, 4, 0.5);
        let x = ids(12, cfg.vocab_size, 5);
        assert_eq!(model.forward(None, &x, true).unwrap(), model.forward(None, &x, true).unwrap());
    }
}

#[test]
fn inputs_are_validated() {
    let cfg = ModelConfig::tiny_encoder(1, 2, 8, 10);
    let model = random_model::<f32>(&cfg, 0, 0.5);
    assert!(model.forward(None, &[], false).is_err());
    assert!(model.forward(None, &[10], false).is_err());
    assert!(model.forward(None, &vec![0; 65], false).is_err());
    assert!(model.forward(Some(&HeadMaskGrid::ones(2, 2)), &[1], false).is_err());
}

#[test]
fn backward_is_linear_in_the_loss() {
    let cfg = ModelConfig::tiny_encoder(1, 2, 8, 20);
    let model = random_model::<f64>(&cfg, 8, 0.5);
    let x = ids(5, 20, 6);
    let grads = |a: f64, b: f64| {
        let mut g = Graph::new(true);
        let nodes = HeadMaskGrid::for_config(&cfg).register(&mut g).unwrap();
        let h = model.forward_graph(&mut g, Some(&nodes), &x, None).unwrap();
        let s = g.sum(h).unwrap();
        let row = g.select_rows(h, &[0]).unwrap();
        let n = g.l2_norm(row).unwrap();
        let sa = g.mul_const(s, a).unwrap();
        let nb = g.mul_const(n, b).unwrap();
        let loss = g.add(sa, nb).unwrap();
        let gr = g.backward(loss).unwrap();
        nodes.iter().map(|&n| gr.scalar(n)).collect::<Vec<_>>()
    };
    let (g1, g2, mix) = (grads(1.0, 0.0), grads(0.0, 1.0), grads(2.0, -3.0));
    for i in 0..g1.len() {
        assert!((mix[i] - (2.0 * g1[i] - 3.0 * g2[i])).abs() < 1e-10);
    }
}

#[test]
fn backward_runs_once_and_needs_recording() {
    let mut g = Graph::<f64>::new(true);
    let v = g.variable(Tensor::vector(vec![1.0, 2.0])).unwrap();
    let s = g.sum(v).unwrap();
    g.backward(s).unwrap();
    assert!(g.backward(s).is_err());
    let mut g = Graph::<f64>::new(false);
    let v = g.variable(Tensor::vector(vec![1.0])).unwrap();
    assert!(g.backward(v).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_rows_sum_to_one(seed in 0u64..1000, n in 1usize..20, decoder in any::<bool>()) {
        let cfg = if decoder { ModelConfig::tiny_decoder(2, 2, 16, 50) } else { ModelConfig::tiny_encoder(2, 2, 16, 50) };
        let model = random_model::<f32>(&cfg, seed, 1.0);
        let out = model.forward(None, &ids(n, 50, seed as usize), true).unwrap();
        for layer in out.attention.unwrap().layers {
            for a in layer {
                for r in 0..n {
                    let s: f32 = a.row(r).iter().sum();
                    prop_assert!((s - 1.0).abs() <= 1e-5);
                }
            }
        }
    }
}
