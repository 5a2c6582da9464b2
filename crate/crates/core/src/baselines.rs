//! Comparison schemes that stand in for the ranking term of the student
//! objective.

use std::collections::BTreeSet;

use crate::distill::{LossValue, RankedList};
use crate::error::{arg_err, Error, Result};
use crate::numerics::{log_softmax_unchecked, softmax_unchecked, DenseVector};

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTarget {
    pub distribution: DenseVector,
    pub amount: f64,
}

/// `(1 − σ)·uniform(labels) + σ/N`.
pub fn smooth_labels(labels: &[usize], n: usize, sigma: f64) -> Result<SmoothedTarget> {
    if !(0.0..1.0).contains(&sigma) {
        return Err(arg_err(format!("smoothing amount {sigma} outside [0, 1)")));
    }
    if labels.is_empty() {
        return Err(arg_err("smoothing needs at least one label"));
    }
    if labels.iter().any(|&a| a >= n) {
        return Err(arg_err("label out of range"));
    }
    let mut dist = vec![sigma / n as f64; n];
    let share = (1.0 - sigma) / labels.len() as f64;
    for &a in labels {
        dist[a] += share;
    }
    Ok(SmoothedTarget { distribution: DenseVector::from(dist), amount: sigma })
}

/// `−Σ targetᵢ log softmax(scores)ᵢ`.
pub fn smoothed_cross_entropy(scores: &[f64], target: &SmoothedTarget) -> Result<LossValue> {
    if scores.len() != target.distribution.len() {
        return Err(Error::Dimension("target and score lengths differ".into()));
    }
    let logp = log_softmax_unchecked(scores);
    let value = -logp.iter().zip(target.distribution.iter()).map(|(l, t)| l * t).sum::<f64>();
    let gradient = logp
        .iter()
        .zip(target.distribution.iter())
        .map(|(l, t)| l.exp() - t)
        .collect();
    Ok(LossValue { value, gradient })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    /// Sorted union of revealed labels and the teacher's top-k.
    pub labels: Vec<usize>,
    pub k: usize,
}

pub fn pseudo_labels(ranking: &RankedList, revealed: &[usize], k: usize) -> PseudoLabelSet {
    let set: BTreeSet<usize> = revealed.iter().chain(ranking.top(k)).copied().collect();
    PseudoLabelSet { labels: set.into_iter().collect(), k }
}

/// `τ²·KL(softmax(t/τ) ‖ softmax(s/τ))`.
pub fn vanilla_kd_loss(student: &[f64], teacher: &[f64], temperature: f64) -> Result<LossValue> {
    if !(temperature > 0.0) {
        return Err(arg_err(format!("temperature must be positive, got {temperature}")));
    }
    if student.len() != teacher.len() {
        return Err(Error::Dimension("teacher and student lengths differ".into()));
    }
    let s: Vec<f64> = student.iter().map(|x| x / temperature).collect();
    let t: Vec<f64> = teacher.iter().map(|x| x / temperature).collect();
    let log_ps = log_softmax_unchecked(&s);
    let log_pt = log_softmax_unchecked(&t);
    let pt = softmax_unchecked(&t);
    let tau2 = temperature * temperature;
    let kl: f64 = pt
        .iter()
        .zip(log_pt.iter().zip(&log_ps))
        .map(|(p, (lt, ls))| if *p > 0.0 { p * (lt - ls) } else { 0.0 })
        .sum();
    let gradient = log_ps
        .iter()
        .zip(&pt)
        .map(|(ls, p)| temperature * (ls.exp() - p))
        .collect();
    Ok(LossValue { value: tau2 * kl.max(0.0), gradient })
}
