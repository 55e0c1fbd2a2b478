// SPDX-License-Identifier: MIT OR Apache-2.0

//! One-sample t-test with Student-t tails from the regularized incomplete
//! beta function.

use serde::Serialize;

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(Error::Statistics(format!(
        "incomplete beta did not converge for a={a}, b={b}, x={x}"
    )))
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !(0.0..=1.0).contains(&x) {
        return Err(Error::Statistics(format!(
            "incomplete beta needs a, b > 0 and x in [0, 1]; got a={a}, b={b}, x={x}"
        )));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_cf(a, b, x)? / a)
    } else {
        Ok(1.0 - front * beta_cf(b, a, 1.0 - x)? / b)
    }
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
pub fn student_t_upper_tail(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) || t.is_nan() {
        return Err(Error::Statistics(format!("invalid t={t} or df={df}")));
    }
    if t.is_infinite() {
        return Ok(if t > 0.0 { 0.0 } else { 1.0 });
    }
    let x = df / (df + t * t);
    let half = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, x)?;
    Ok(if t > 0.0 { half } else { 1.0 - half })
}

/// One-tailed test result, alternative hypothesis `mean > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StatResult {
    pub n: usize,
    pub mean_d: f64,
    /// Sample standard deviation (`n - 1` denominator).
    pub stddev_d: f64,
    /// Infinite when the variance is zero and the mean is not; serialized
    /// as `null` then.
    pub t_stat: f64,
    pub p_value: f64,
    /// Set when the variance is zero and the mean is not.
    pub degenerate: bool,
}

pub fn head_ttest(d: &[f64]) -> Result<StatResult> {
    let n = d.len();
    if n < 2 {
        return Err(Error::Statistics(format!("t-test needs at least 2 samples, got {n}")));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "t-test",
            location: None,
        });
    }
    let nf = n as f64;
    if d.iter().all(|&v| v == d[0]) {
        let mean = d[0];
        return Ok(if mean == 0.0 {
            StatResult { n, mean_d: 0.0, stddev_d: 0.0, t_stat: 0.0, p_value: 0.5, degenerate: false }
        } else {
            StatResult {
                n,
                mean_d: mean,
                stddev_d: 0.0,
                t_stat: f64::INFINITY.copysign(mean),
                p_value: if mean > 0.0 { 0.0 } else { 1.0 },
                degenerate: true,
            }
        });
    }
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    let t = mean / (sd / nf.sqrt());
    Ok(StatResult {
        n,
        mean_d: mean,
        stddev_d: sd,
        t_stat: t,
        p_value: student_t_upper_tail(t, nf - 1.0)?,
        degenerate: false,
    })
}
