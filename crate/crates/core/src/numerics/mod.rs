//! Numeric building blocks used by the models and losses, plus a
//! finite-difference gradient checker.

mod dense;
mod gradcheck;
mod rng;

pub use dense::{DenseMatrix, DenseVector};
pub use gradcheck::{check_gradient, DEFAULT_STEP};
pub use rng::RngState;

use crate::error::{dim_err, Error, Result};

fn ensure_finite(xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(dim_err("empty score vector"));
    }
    if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("non-finite entry {} at index {i}", xs[i])));
    }
    Ok(())
}

/// `ln Σ exp(xᵢ)`, evaluated after subtracting the maximum.
pub fn log_sum_exp(xs: &[f64]) -> Result<f64> {
    ensure_finite(xs)?;
    Ok(log_sum_exp_unchecked(xs))
}

pub(crate) fn log_sum_exp_unchecked(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Normalized exponentials, computed with max-subtraction.
pub fn softmax(xs: &[f64]) -> Result<DenseVector> {
    ensure_finite(xs)?;
    Ok(DenseVector::from(softmax_unchecked(xs)))
}

pub(crate) fn softmax_unchecked(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// `log softmax(xs)`; exact even where the softmax itself underflows.
pub(crate) fn log_softmax_unchecked(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp_unchecked(xs);
    xs.iter().map(|&x| x - lse).collect()
}
