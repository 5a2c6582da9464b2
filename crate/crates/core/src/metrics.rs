//! Top-k retrieval metrics over answer score vectors.

use serde::{Deserialize, Serialize};

use crate::distill::argsort_desc;
use crate::error::{arg_err, Result};
use crate::model::{ScoreModel, ScoreVector};
use crate::parallel;
use crate::synthdata::{Dataset, RelevanceMode};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub acc_at_1: f64,
    pub hit_at_k: f64,
    pub ndcg_at_k: f64,
    pub k: usize,
    pub num_instances: usize,
    /// Instances left out of the nDCG mean because nothing was relevant.
    pub ndcg_excluded: usize,
}

fn top_index(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// 1 when the top-scored answer (lowest index among ties) is a positive.
pub fn acc_at_1(scores: &[f64], positives: &[usize]) -> Result<f64> {
    if positives.is_empty() {
        return Err(arg_err("Acc@1 needs at least one positive"));
    }
    if scores.is_empty() {
        return Err(arg_err("empty score vector"));
    }
    Ok(if positives.contains(&top_index(scores)) { 1.0 } else { 0.0 })
}

/// 1 when any positive is among the `k` best-scored answers.
pub fn hit_at_k(scores: &[f64], positives: &[usize], k: usize) -> Result<f64> {
    if k == 0 || k > scores.len() {
        return Err(arg_err(format!("k = {k} outside 1..={}", scores.len())));
    }
    let order = argsort_desc(scores);
    Ok(if order[..k].iter().any(|a| positives.contains(a)) { 1.0 } else { 0.0 })
}

fn dcg(gains_in_order: impl Iterator<Item = f64>) -> f64 {
    gains_in_order
        .enumerate()
        .map(|(r, rel)| (2f64.powf(rel) - 1.0) / (r as f64 + 2.0).log2())
        .sum()
}

/// Exponential-gain nDCG@k; `None` when no answer is relevant.
pub fn ndcg_at_k(scores: &[f64], relevance: &[f64], k: usize) -> Result<Option<f64>> {
    if relevance.len() != scores.len() {
        return Err(arg_err("relevance and score lengths differ"));
    }
    if k == 0 {
        return Err(arg_err("k must be positive"));
    }
    if relevance.iter().any(|&r| !(r >= 0.0)) {
        return Err(arg_err("relevance must be non-negative"));
    }
    if relevance.iter().all(|&r| r == 0.0) {
        return Ok(None);
    }
    let order = argsort_desc(scores);
    let actual = dcg(order.iter().take(k).map(|&a| relevance[a]));
    let mut ideal_rel = relevance.to_vec();
    ideal_rel.sort_by(|a, b| b.total_cmp(a));
    let ideal = dcg(ideal_rel.into_iter().take(k));
    Ok(Some(actual / ideal))
}

/// Metric means over precomputed scores, one vector per instance.
pub fn evaluate_scores(
    scores: &[ScoreVector],
    dataset: &Dataset,
    k: usize,
    mode: RelevanceMode,
) -> Result<EvalResult> {
    if scores.len() != dataset.len() {
        return Err(arg_err("one score vector per instance required"));
    }
    let n = dataset.task.num_answers;
    let per: Vec<Result<(f64, f64, Option<f64>)>> = parallel::map_range(dataset.len(), |i| {
        let inst = &dataset.instances[i];
        let s = &scores[i];
        let rel = inst.relevance(n, mode);
        Ok((
            acc_at_1(s, &inst.full_positives)?,
            hit_at_k(s, &inst.full_positives, k)?,
            ndcg_at_k(s, &rel, k)?,
        ))
    });
    let (mut acc, mut hit, mut ndcg, mut counted) = (0.0, 0.0, 0.0, 0usize);
    for r in per {
        let (a, h, g) = r?;
        acc += a;
        hit += h;
        if let Some(g) = g {
            ndcg += g;
            counted += 1;
        }
    }
    let m = dataset.len().max(1) as f64;
    Ok(EvalResult {
        acc_at_1: acc / m,
        hit_at_k: hit / m,
        ndcg_at_k: if counted > 0 { ndcg / counted as f64 } else { 0.0 },
        k,
        num_instances: dataset.len(),
        ndcg_excluded: dataset.len() - counted,
    })
}

/// Deterministic scores for every instance of `dataset`.
pub fn score_dataset(model: &ScoreModel, dataset: &Dataset) -> Result<Vec<ScoreVector>> {
    parallel::map(&dataset.instances, |inst| model.forward(&inst.features))
        .into_iter()
        .collect()
}

/// Evaluates `model` against the full positive sets of `dataset`.
pub fn evaluate(model: &ScoreModel, dataset: &Dataset, k: usize, mode: RelevanceMode) -> Result<EvalResult> {
    evaluate_scores(&score_dataset(model, dataset)?, dataset, k, mode)
}

/// Fraction of unrevealed positives that land in the model's top-k.
pub fn hidden_recovery(model: &ScoreModel, dataset: &Dataset, k: usize) -> Result<f64> {
    let scores = score_dataset(model, dataset)?;
    let (mut found, mut total) = (0usize, 0usize);
    for (inst, s) in dataset.instances.iter().zip(&scores) {
        let order = argsort_desc(s);
        let top = &order[..k.min(order.len())];
        for a in inst.hidden_positives() {
            total += 1;
            if top.contains(&a) {
                found += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { found as f64 / total as f64 })
}
