//! Pieces of the student objective shared by every scheme: the
//! classification loss over revealed labels and its weighted combination with
//! a ranking term.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::model::ScoreVector;
use crate::numerics::{log_softmax_unchecked, softmax_unchecked, DenseVector};

/// Loss value together with its gradient w.r.t. the raw scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: DenseVector,
}

impl LossValue {
    pub fn zero(n: usize) -> Self {
        LossValue { value: 0.0, gradient: DenseVector::zeros(n) }
    }
}

/// Answers ordered by descending teacher score, ties by ascending index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub permutation: Vec<usize>,
    pub teacher_scores: ScoreVector,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    pub fn top(&self, k: usize) -> &[usize] {
        &self.permutation[..k.min(self.permutation.len())]
    }
}

/// Descending-score order of `scores`, ties broken by ascending index.
pub fn argsort_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

pub fn teacher_ranking(teacher_scores: &ScoreVector) -> RankedList {
    RankedList {
        permutation: argsort_desc(teacher_scores),
        teacher_scores: teacher_scores.clone(),
    }
}

/// Mean negative log-likelihood of the labeled answers under softmax scores.
pub fn classification_loss(scores: &[f64], labels: &[usize]) -> Result<LossValue> {
    if labels.is_empty() {
        return Err(arg_err("classification loss needs at least one label"));
    }
    if let Some(&bad) = labels.iter().find(|&&a| a >= scores.len()) {
        return Err(arg_err(format!("label {bad} out of range for {} answers", scores.len())));
    }
    let logp = log_softmax_unchecked(scores);
    let mut grad = softmax_unchecked(scores);
    let w = 1.0 / labels.len() as f64;
    let mut value = 0.0;
    for &a in labels {
        value -= w * logp[a];
        grad[a] -= w;
    }
    Ok(LossValue { value, gradient: DenseVector::from(grad) })
}

/// `cls + alpha · rank`, value and gradient.
pub fn combined_loss(cls: &LossValue, rank: &LossValue, alpha: f64) -> LossValue {
    let mut gradient = cls.gradient.clone();
    if alpha != 0.0 {
        gradient.axpy(alpha, &rank.gradient);
    }
    LossValue { value: cls.value + alpha * rank.value, gradient }
}
