// SPDX-License-Identifier: MIT OR Apache-2.0

// Reverse-mode rules of every graph primitive against central differences.
//
// Each case perturbs the primitive's inputs along random directions through
// one scalar `m`: L(m) = sum(w * f(x0 + m dx)). The reverse pass gives
// dL/dm at m = 0; the reference is a central difference of L in f64.

use biasheads::autodiff::{finite_difference_check, Graph, NodeId, ScalarParam};
use biasheads::{Result, Tensor};
use proptest::prelude::*;

type Build = dyn Fn(&mut Graph<'_, f64>, &[NodeId]) -> Result<NodeId>;

fn weights_like(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i as f64) * 0.7 + 0.3).sin()).collect()
}

fn loss_at(m: f64, record: bool, inputs: &[(Tensor<f64>, Tensor<f64>)], f: &Build) -> Result<(f64, f64)> {
    let mut g = Graph::new(record);
    let mn = g.param(&ScalarParam::new(m, (0, 0)))?;
    let mut xs = Vec::new();
    for (x0, dx) in inputs {
        let base = g.constant(x0.clone())?;
        let dir = g.constant(dx.clone())?;
        let step = g.scale(dir, mn)?;
        xs.push(g.add(base, step)?);
    }
    let y = f(&mut g, &xs)?;
    let shape = g.value(y).shape().to_vec();
    let n = g.value(y).numel();
    let w = g.constant(Tensor::new(shape, weights_like(n))?)?;
    let prod = g.mul(y, w)?;
    let loss = g.sum(prod)?;
    let value = g.value(loss).item();
    let grad = if record { g.backward(loss)?.scalar(mn) } else { 0.0 };
    Ok((value, grad))
}

fn check(inputs: Vec<(Tensor<f64>, Tensor<f64>)>, f: &Build) -> std::result::Result<(), TestCaseError> {
    let (_, analytic) = loss_at(0.0, true, &inputs, f).unwrap();
    let report = finite_difference_check(|p| Ok(loss_at(p[0], false, &inputs, f)?.0), &[0.0], &[analytic], 1e-5).unwrap();
    let e = &report.entries[0];
    let tol = 1e-6 * e.analytic.abs().max(e.numeric.abs()).max(1.0);
    prop_assert!(
        (e.analytic - e.numeric).abs() <= tol,
        "analytic {} numeric {}",
        e.analytic,
        e.numeric
    );
    Ok(())
}

fn tensor(shape: Vec<usize>, lo: f64, hi: f64) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(lo..hi, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

/// Input and direction of the same shape.
fn pair(shape: Vec<usize>, lo: f64, hi: f64) -> impl Strategy<Value = (Tensor<f64>, Tensor<f64>)> {
    (tensor(shape.clone(), lo, hi), tensor(shape, -1.0, 1.0))
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..5, 1usize..5)
}

fn away_from_zero(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|v| if v.abs() < 0.2 { v.signum() * 0.2 + v } else { v })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matmul(
        (a, b) in (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(r, k, c)| (pair(vec![r, k], -2.0, 2.0), pair(vec![k, c], -2.0, 2.0)))
    ) {
        check(vec![a, b], &|g, x| g.matmul(x[0], x[1]))?;
    }

    #[test]
    fn bmm(b in 1usize..3, (r, k) in dims(), c in 1usize..4, vals in prop::collection::vec(-2.0f64..2.0, 128)) {
        let take = |n: usize, off: usize| vals.iter().cycle().skip(off).take(n).copied().collect::<Vec<_>>();
        let a = Tensor::new(vec![b, r, k], take(b * r * k, 0)).unwrap();
        let da = Tensor::new(vec![b, r, k], take(b * r * k, 7)).unwrap();
        let x = Tensor::new(vec![b, k, c], take(b * k * c, 3)).unwrap();
        let dx = Tensor::new(vec![b, k, c], take(b * k * c, 11)).unwrap();
        check(vec![(a, da), (x, dx)], &|g, x| g.bmm(x[0], x[1]))?;
    }

    #[test]
    fn transpose(p in dims().prop_flat_map(|(r, c)| pair(vec![r, c], -2.0, 2.0))) {
        check(vec![p], &|g, x| g.transpose(x[0]))?;
    }

    #[test]
    fn add_and_broadcast(
        (a, b) in dims().prop_flat_map(|(r, c)| (pair(vec![r, c], -2.0, 2.0), pair(vec![c], -2.0, 2.0)))
    ) {
        check(vec![a.clone(), b], &|g, x| g.add(x[0], x[1]))?;
        check(vec![a.clone(), a], &|g, x| g.add(x[0], x[1]))?;
    }

    #[test]
    fn sub_mul_div(
        (a, b) in dims().prop_flat_map(|(r, c)| (pair(vec![r, c], -2.0, 2.0), pair(vec![r, c], 0.5, 2.0)))
    ) {
        check(vec![a.clone(), b.clone()], &|g, x| g.sub(x[0], x[1]))?;
        check(vec![a.clone(), b.clone()], &|g, x| g.mul(x[0], x[1]))?;
        check(vec![a, b], &|g, x| g.div(x[0], x[1]))?;
    }

    #[test]
    fn scale_and_mul_const(p in dims().prop_flat_map(|(r, c)| pair(vec![r, c], -2.0, 2.0)), s in pair(vec![1], -2.0, 2.0), c in -3.0f64..3.0) {
        check(vec![p.clone(), s], &|g, x| g.scale(x[0], x[1]))?;
        check(vec![p], &move |g, x| g.mul_const(x[0], c))?;
    }

    #[test]
    fn softmax(p in dims().prop_flat_map(|(r, c)| pair(vec![r, c], -3.0, 3.0))) {
        check(vec![p], &|g, x| g.softmax(x[0]))?;
    }

    #[test]
    fn causal_softmax(p in (1usize..6).prop_flat_map(|n| pair(vec![n, n], -3.0, 3.0))) {
        check(vec![p], &|g, x| g.causal_softmax(x[0]))?;
    }

    #[test]
    fn layer_norm(
        (x, gain, bias) in (1usize..4, 2usize..7).prop_flat_map(|(r, c)| (pair(vec![r, c], -2.0, 2.0), pair(vec![c], 0.5, 1.5), pair(vec![c], -0.5, 0.5)))
    ) {
        check(vec![x, gain, bias], &|g, x| g.layer_norm(x[0], x[1], x[2], 1e-5))?;
    }

    #[test]
    fn gelu_and_tanh(p in dims().prop_flat_map(|(r, c)| pair(vec![r, c], -3.0, 3.0))) {
        check(vec![p.clone()], &|g, x| g.gelu(x[0], false))?;
        check(vec![p.clone()], &|g, x| g.gelu(x[0], true))?;
        check(vec![p], &|g, x| g.tanh(x[0]))?;
    }

    #[test]
    fn concat(
        (a, b) in (1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(r, c1, c2)| (pair(vec![r, c1], -2.0, 2.0), pair(vec![r, c2], -2.0, 2.0)))
    ) {
        check(vec![a, b], &|g, x| g.concat(&[x[0], x[1]]))?;
    }

    #[test]
    fn mean_over_each_axis(p in dims().prop_flat_map(|(r, c)| pair(vec![r, c], -2.0, 2.0))) {
        check(vec![p.clone()], &|g, x| g.mean(x[0], 0))?;
        check(vec![p], &|g, x| g.mean(x[0], 1))?;
    }

    #[test]
    fn norms_and_cosine(
        (a, b) in (2usize..8).prop_flat_map(|n| (pair(vec![n], -2.0, 2.0), pair(vec![n], -2.0, 2.0)))
    ) {
        let (a, b) = ((away_from_zero(a.0), a.1), (away_from_zero(b.0), b.1));
        check(vec![a.clone()], &|g, x| g.l2_norm(x[0]))?;
        check(vec![a.clone(), b], &|g, x| g.cosine(x[0], x[1]))?;
        check(vec![a], &|g, x| g.std(x[0]))?;
    }

    #[test]
    fn abs(p in (1usize..8).prop_flat_map(|n| pair(vec![n], -2.0, 2.0))) {
        check(vec![(away_from_zero(p.0), p.1)], &|g, x| g.abs(x[0]))?;
    }

    #[test]
    fn gather_select_slice(
        p in (2usize..5, 2usize..6).prop_flat_map(|(r, c)| pair(vec![r, c], -2.0, 2.0)),
        picks in prop::collection::vec(0usize..100, 1..6),
    ) {
        let (rows, cols) = (p.0.shape()[0], p.0.shape()[1]);
        let ids: Vec<usize> = picks.iter().map(|i| i % rows).collect();
        let ids2 = ids.clone();
        check(vec![p.clone()], &move |g, x| g.gather(x[0], &ids))?;
        check(vec![p.clone()], &move |g, x| g.select_rows(x[0], &ids2))?;
        let start = picks[0] % cols;
        let len = 1 + picks[0] % (cols - start);
        check(vec![p], &move |g, x| g.slice_last(x[0], start, len))?;
    }

    #[test]
    fn stack_sum_reshape(
        (a, b) in dims().prop_flat_map(|(r, c)| (pair(vec![r, c], -2.0, 2.0), pair(vec![r, c], -2.0, 2.0)))
    ) {
        check(vec![a.clone(), b], &|g, x| g.stack(&[x[0], x[1]]))?;
        check(vec![a.clone()], &|g, x| g.sum(x[0]))?;
        let n = a.0.numel();
        check(vec![a], &move |g, x| g.reshape(x[0], vec![n]))?;
    }

    #[test]
    fn stack_of_scalars(a in pair(vec![1], -2.0, 2.0), b in pair(vec![1], -2.0, 2.0)) {
        check(vec![a, b], &|g, x| g.stack(&[x[0], x[1]]))?;
    }
}
