// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense row-major tensors and the forward kernels used by the graph.
//!
//! Kernels here are plain functions over [`Tensor`] values. The autodiff
//! graph calls the same kernels whether or not it records, so forward values
//! never depend on the recording mode.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                message: format!(
                    "shape {shape:?} holds {expected} elements, got {}",
                    data.len()
                ),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis (1 for a 0-d shape).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as `[numel / last_dim, last_dim]`.
    pub fn outer(&self) -> usize {
        let last = self.last_dim();
        if last == 0 {
            0
        } else {
            self.numel() / last
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.last_dim();
        &self.data[r * c..(r + 1) * c]
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64_lossless()).expect("cast"))
                .collect(),
        }
    }

    /// Largest absolute elementwise difference; `None` if shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (*a - *b).abs())
                .fold(T::zero(), T::max),
        )
    }
}

fn expect_rank<T>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.shape.len() != rank {
        return Err(Error::InvalidShape {
            op,
            message: format!("expected rank {rank}, got shape {:?}", t.shape),
        });
    }
    Ok(())
}

fn same_shape<T>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::Shape {
            op,
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    Ok(())
}

const PAR_THRESHOLD: usize = 1 << 16;

/// `out[m, n] += a[m, k] * b[k, n]` over raw slices, i-k-j order.
fn gemm_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    let row = |(i, out_row): (usize, &mut [T])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    };
    if n == 0 {
        return;
    }
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank("matmul", a, 2)?;
    expect_rank("matmul", b, 2)?;
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![T::zero(); m * n];
    gemm_acc(&a.data, &b.data, &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

pub fn bmm<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_rank("bmm", a, 3)?;
    expect_rank("bmm", b, 3)?;
    let (batch, m, k) = (a.shape[0], a.shape[1], a.shape[2]);
    if b.shape[0] != batch || b.shape[1] != k {
        return Err(Error::Shape {
            op: "bmm",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let n = b.shape[2];
    let mut out = vec![T::zero(); batch * m * n];
    for (i, chunk) in out.chunks_mut((m * n).max(1)).enumerate().take(batch) {
        gemm_acc(
            &a.data[i * m * k..(i + 1) * m * k],
            &b.data[i * k * n..(i + 1) * k * n],
            chunk,
            m,
            k,
            n,
        );
    }
    Tensor::new(vec![batch, m, n], out)
}

/// Swaps the last two axes.
pub fn transpose<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.ndim() < 2 {
        return Err(Error::InvalidShape {
            op: "transpose",
            message: format!("needs rank >= 2, got {:?}", x.shape),
        });
    }
    let r = x.ndim();
    let (m, n) = (x.shape[r - 2], x.shape[r - 1]);
    let batch = x.numel() / (m * n).max(1);
    let mut out = vec![T::zero(); x.numel()];
    for bi in 0..batch {
        let src = &x.data[bi * m * n..(bi + 1) * m * n];
        let dst = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    let mut shape = x.shape.clone();
    shape.swap(r - 2, r - 1);
    Tensor::new(shape, out)
}

/// Elementwise add; `b` may also match the trailing axes of `a` and is then
/// broadcast over the leading ones.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape == b.shape {
        return zip_map("add", a, b, |x, y| x + y);
    }
    if !is_trailing(&b.shape, &a.shape) {
        return Err(Error::Shape {
            op: "add",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let inner = b.numel();
    let data = a
        .data
        .chunks(inner)
        .flat_map(|chunk| chunk.iter().zip(&b.data).map(|(x, y)| *x + *y))
        .collect();
    Tensor::new(a.shape.clone(), data)
}

pub(crate) fn is_trailing(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small && !small.is_empty()
}

pub fn zip_map<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    same_shape(op, a, b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape.clone(), data)
}

pub fn scale<T: Scalar>(x: &Tensor<T>, s: T) -> Tensor<T> {
    x.map(|v| v * s)
}

/// Softmax over the last axis with max subtraction. When `causal` is set the
/// tensor is read as `[.., q, k]` and entries with `k > q` are exactly zero.
pub fn softmax<T: Scalar>(x: &Tensor<T>, causal: bool) -> Result<Tensor<T>> {
    let n = x.last_dim();
    if causal {
        if x.ndim() < 2 || x.shape[x.ndim() - 2] != n {
            return Err(Error::InvalidShape {
                op: "causal_softmax",
                message: format!("expects square trailing axes, got {:?}", x.shape),
            });
        }
    }
    let mut out = vec![T::zero(); x.numel()];
    for (r, (src, dst)) in x.data.chunks(n).zip(out.chunks_mut(n)).enumerate() {
        let visible = if causal { (r % n) + 1 } else { n };
        let src = &src[..visible];
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            sum += *d;
        }
        for d in dst[..visible].iter_mut() {
            *d /= sum;
        }
    }
    Tensor::new(x.shape.clone(), out)
}

/// Layer-normalization statistics per row: (mean, reciprocal std).
pub fn layer_norm_stats<T: Scalar>(x: &Tensor<T>, eps: T) -> Vec<(T, T)> {
    let n = x.last_dim();
    let nf = T::from_usize(n).unwrap();
    x.data
        .chunks(n)
        .map(|row| {
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            (mean, T::one() / (var + eps).sqrt())
        })
        .collect()
}

pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let n = x.last_dim();
    if gain.shape != [n] || bias.shape != [n] {
        return Err(Error::Shape {
            op: "layer_norm",
            left: x.shape.clone(),
            right: gain.shape.clone(),
        });
    }
    let stats = layer_norm_stats(x, eps);
    let mut out = Vec::with_capacity(x.numel());
    for (row, (mean, rstd)) in x.data.chunks(n).zip(stats) {
        for ((&v, &g), &b) in row.iter().zip(&gain.data).zip(&bias.data) {
            out.push((v - mean) * rstd * g + b);
        }
    }
    Tensor::new(x.shape.clone(), out)
}

/// sqrt(2/pi) as used by the tanh GELU approximation.
pub const GELU_TANH_SCALE: f64 = 0.7978845608;
pub const GELU_TANH_CUBIC: f64 = 0.044715;

pub fn gelu_tanh<T: Scalar>(v: T) -> T {
    let c = T::lit(GELU_TANH_SCALE);
    let k = T::lit(GELU_TANH_CUBIC);
    let half = T::lit(0.5);
    half * v * (T::one() + (c * (v + k * v * v * v)).tanh())
}

pub fn gelu_tanh_grad<T: Scalar>(v: T) -> T {
    let c = T::lit(GELU_TANH_SCALE);
    let k = T::lit(GELU_TANH_CUBIC);
    let half = T::lit(0.5);
    let three = T::lit(3.0);
    let u = c * (v + k * v * v * v);
    let th = u.tanh();
    let du = c * (T::one() + three * k * v * v);
    half * (T::one() + th) + half * v * (T::one() - th * th) * du
}

pub fn gelu_erf<T: Scalar>(v: T) -> T {
    let half = T::lit(0.5);
    half * v * (T::one() + (v * T::FRAC_1_SQRT_2()).erf())
}

pub fn gelu_erf_grad<T: Scalar>(v: T) -> T {
    let half = T::lit(0.5);
    let cdf = half * (T::one() + (v * T::FRAC_1_SQRT_2()).erf());
    let pdf = (-(v * v) * half).exp() / (T::lit(2.0) * T::PI()).sqrt();
    cdf + v * pdf
}

pub fn concat_last<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::InvalidShape {
        op: "concat",
        message: "no inputs".into(),
    })?;
    let lead = &first.shape[..first.ndim() - 1];
    for p in parts {
        if p.ndim() != first.ndim() || &p.shape[..p.ndim() - 1] != lead {
            return Err(Error::Shape {
                op: "concat",
                left: first.shape.clone(),
                right: p.shape.clone(),
            });
        }
    }
    let rows = first.outer();
    let total: usize = parts.iter().map(|p| p.last_dim()).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::new(shape, data)
}

/// Splits shape around `axis` into (outer, axis, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Mean over `axis`, which is removed from the shape (a scalar result has
/// shape `[1]`).
pub fn mean_axis<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.ndim() || x.shape[axis] == 0 {
        return Err(Error::InvalidShape {
            op: "mean",
            message: format!("axis {axis} invalid or empty for shape {:?}", x.shape),
        });
    }
    let (outer, len, inner) = axis_extents(&x.shape, axis);
    let lf = T::from_usize(len).unwrap();
    let mut data = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for a in 0..len {
            let src = &x.data[(o * len + a) * inner..(o * len + a + 1) * inner];
            for (d, &s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    for d in data.iter_mut() {
        *d /= lf;
    }
    let mut shape: Vec<usize> = x.shape.clone();
    shape.remove(axis);
    if shape.is_empty() {
        shape.push(1);
    }
    Tensor::new(shape, data)
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

pub fn l2_norm<T: Scalar>(x: &[T]) -> T {
    dot(x, x).sqrt()
}

/// Population standard deviation and mean.
pub fn population_std<T: Scalar>(x: &[T]) -> (T, T) {
    let n = T::from_usize(x.len()).unwrap();
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (var.sqrt(), mean)
}

pub fn gather_rows<T: Scalar>(table: &Tensor<T>, ids: &[usize]) -> Result<Tensor<T>> {
    expect_rank("gather", table, 2)?;
    let (rows, cols) = (table.shape[0], table.shape[1]);
    let mut data = Vec::with_capacity(ids.len() * cols);
    for &id in ids {
        if id >= rows {
            return Err(Error::InvalidShape {
                op: "gather",
                message: format!("row {id} out of range for table {:?}", table.shape),
            });
        }
        data.extend_from_slice(table.row(id));
    }
    Tensor::new(vec![ids.len(), cols], data)
}

pub fn slice_last<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let n = x.last_dim();
    if start + len > n || len == 0 {
        return Err(Error::InvalidShape {
            op: "slice",
            message: format!("columns {start}..{} out of range for {:?}", start + len, x.shape),
        });
    }
    let mut data = Vec::with_capacity(x.outer() * len);
    for r in 0..x.outer() {
        data.extend_from_slice(&x.row(r)[start..start + len]);
    }
    let mut shape = x.shape.clone();
    *shape.last_mut().unwrap() = len;
    Tensor::new(shape, data)
}

/// Numerically stable log-softmax of a single row.
pub fn log_softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    row.iter().map(|&v| v - lse).collect()
}
