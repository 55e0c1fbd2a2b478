// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct FdEntry {
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_relative_error: f64,
    pub entries: Vec<FdEntry>,
}

/// Compares analytic gradients against central differences of `loss_fn`.
///
/// `loss_fn` receives the full parameter vector. The relative error of each
/// entry is `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_check<T, F>(
    mut loss_fn: F,
    point: &[T],
    analytic: &[f64],
    eps: T,
) -> Result<FdReport>
where
    T: Scalar,
    F: FnMut(&[T]) -> Result<T>,
{
    if !(eps > T::zero()) {
        return Err(Error::FiniteDifference(format!("step must be positive, got {eps}")));
    }
    if point.len() != analytic.len() {
        return Err(Error::FiniteDifference(format!(
            "{} parameters but {} analytic gradients",
            point.len(),
            analytic.len()
        )));
    }
    let first = loss_fn(point)?;
    let second = loss_fn(point)?;
    if first.to_f64_lossless().to_bits() != second.to_f64_lossless().to_bits() {
        return Err(Error::FiniteDifference(format!(
            "loss function is not deterministic ({first} vs {second})"
        )));
    }

    let mut probe = point.to_vec();
    let mut entries = Vec::with_capacity(point.len());
    for (i, &a) in analytic.iter().enumerate() {
        probe[i] = point[i] + eps;
        let up = loss_fn(&probe)?;
        probe[i] = point[i] - eps;
        let down = loss_fn(&probe)?;
        probe[i] = point[i];
        let numeric = ((up - down) / (eps + eps)).to_f64_lossless();
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        entries.push(FdEntry {
            analytic: a,
            numeric,
            relative_error: (a - numeric).abs() / denom,
        });
    }
    let max_relative_error = entries.iter().map(|e| e.relative_error).fold(0.0, f64::max);
    Ok(FdReport {
        max_relative_error,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_at_one_is_exact_up_to_rounding() {
        let report = finite_difference_check(|m: &[f32]| Ok(m[0] * m[0]), &[1.0], &[2.0], 1e-3).unwrap();
        assert!(report.max_relative_error < 1e-5, "{report:?}");
    }

    #[test]
    fn zero_step_is_rejected() {
        let err = finite_difference_check(|m: &[f64]| Ok(m[0]), &[1.0], &[1.0], 0.0).unwrap_err();
        assert!(matches!(err, Error::FiniteDifference(_)));
    }

    #[test]
    fn nondeterministic_loss_is_detected() {
        let mut calls = 0u32;
        let loss = |m: &[f64]| {
            calls += 1;
            Ok(m[0] + calls as f64)
        };
        let err = finite_difference_check(loss, &[0.0], &[1.0], 1e-3).unwrap_err();
        assert!(err.to_string().contains("not deterministic"));
    }
}
