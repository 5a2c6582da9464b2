//! Partial listwise ranking distillation.
//!
//! A sublist is the teacher's top `hot_size` answers followed by `cold_size`
//! answers drawn from the rest of the ranking with rank-decaying
//! probabilities. Listwise losses are evaluated on that sublist only and
//! their gradients scattered back onto the full score vector.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distill::{argsort_desc, LossValue, RankedList};
use crate::error::{arg_err, Error, Result};
use crate::numerics::{log_softmax_unchecked, log_sum_exp_unchecked, softmax_unchecked, DenseVector, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingScheme {
    Exp,
    Zipf,
    Random,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingPlan {
    pub hot_size: usize,
    pub cold_size: usize,
    pub scheme: SamplingScheme,
    /// Decay coefficient of the cold-list distribution.
    pub smoothing: f64,
    pub with_replacement: bool,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan {
            hot_size: 10,
            cold_size: 5,
            scheme: SamplingScheme::Zipf,
            smoothing: 1.0,
            with_replacement: false,
        }
    }
}

impl SamplingPlan {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.scheme == SamplingScheme::Full {
            return Ok(());
        }
        if self.hot_size + self.cold_size > n {
            return Err(arg_err(format!(
                "hot ({}) + cold ({}) exceeds {n} answers",
                self.hot_size, self.cold_size
            )));
        }
        if self.hot_size + self.cold_size == 0 {
            return Err(arg_err("sublist would be empty"));
        }
        if !(self.smoothing > 0.0) {
            return Err(arg_err(format!("smoothing must be positive, got {}", self.smoothing)));
        }
        Ok(())
    }
}

/// Sampled answers in teacher-rank order, hot segment first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sublist {
    pub answer_ids: Vec<usize>,
    /// 0-based positions of `answer_ids` in the full teacher ranking.
    pub source_ranks: Vec<usize>,
    pub hot_len: usize,
}

impl Sublist {
    pub fn len(&self) -> usize {
        self.answer_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answer_ids.is_empty()
    }
}

/// Normalized cold-list probabilities for a remainder of `len` ranks,
/// indexed by 1-based rank within the remainder.
pub fn cold_probabilities(scheme: SamplingScheme, smoothing: f64, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (1..=len)
        .map(|k| {
            let k = k as f64;
            match scheme {
                SamplingScheme::Exp => (-smoothing * (k - 1.0)).exp(),
                SamplingScheme::Zipf => k.powf(-smoothing),
                SamplingScheme::Random | SamplingScheme::Full => 1.0,
            }
        })
        .collect();
    // exp weights are shifted by e^{α}, which normalization removes.
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn draw_index(weights: &[f64], rng: &mut RngState) -> usize {
    let total: f64 = weights.iter().sum();
    let mut target = rng.uniform() * total;
    for (i, &w) in weights.iter().enumerate() {
        if target < w {
            return i;
        }
        target -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

pub fn sample_sublist(ranking: &RankedList, plan: &SamplingPlan, rng: &mut RngState) -> Result<Sublist> {
    let n = ranking.len();
    plan.validate(n)?;
    if plan.scheme == SamplingScheme::Full {
        return Ok(Sublist {
            answer_ids: ranking.permutation.clone(),
            source_ranks: (0..n).collect(),
            hot_len: n,
        });
    }
    let hot = plan.hot_size;
    let remainder = n - hot;
    let mut weights = cold_probabilities(plan.scheme, plan.smoothing, remainder);
    let mut cold: Vec<usize> = Vec::with_capacity(plan.cold_size);
    for _ in 0..plan.cold_size {
        let i = draw_index(&weights, rng);
        if plan.with_replacement {
            if !cold.contains(&i) {
                cold.push(i);
            }
        } else {
            cold.push(i);
            weights[i] = 0.0;
        }
    }
    cold.sort_unstable();
    let source_ranks: Vec<usize> = (0..hot).chain(cold.into_iter().map(|i| hot + i)).collect();
    Ok(Sublist {
        answer_ids: source_ranks.iter().map(|&r| ranking.permutation[r]).collect(),
        source_ranks,
        hot_len: hot,
    })
}

fn gather(scores: &[f64], sub: &Sublist) -> Result<Vec<f64>> {
    sub.answer_ids
        .iter()
        .map(|&a| {
            scores
                .get(a)
                .copied()
                .ok_or_else(|| Error::Dimension(format!("answer {a} outside score vector")))
        })
        .collect()
}

fn scatter(n: usize, sub: &Sublist, local: &[f64]) -> DenseVector {
    let mut g = DenseVector::zeros(n);
    for (&a, &v) in sub.answer_ids.iter().zip(local) {
        g[a] += v;
    }
    g
}

/// Plackett–Luce negative log-likelihood of the sublist order.
pub fn listmle_loss(student_scores: &[f64], sub: &Sublist) -> Result<LossValue> {
    let s = gather(student_scores, sub)?;
    let n = s.len();
    if n == 0 {
        return Err(arg_err("empty sublist"));
    }
    // suffix[i] = log Σ_{k≥i} exp(s_k)
    let mut suffix = vec![0.0; n];
    suffix[n - 1] = s[n - 1];
    for i in (0..n - 1).rev() {
        suffix[i] = log_sum_exp_unchecked(&[s[i], suffix[i + 1]]);
    }
    let value: f64 = (0..n).map(|i| suffix[i] - s[i]).sum();
    let grad: Vec<f64> = (0..n)
        .map(|k| (0..=k).map(|i| (s[k] - suffix[i]).exp()).sum::<f64>() - 1.0)
        .collect();
    Ok(LossValue { value, gradient: scatter(student_scores.len(), sub, &grad) })
}

fn listnet_from_targets(student_scores: &[f64], target_logits: &[f64], sub: &Sublist) -> Result<LossValue> {
    let s = gather(student_scores, sub)?;
    if s.is_empty() {
        return Err(arg_err("empty sublist"));
    }
    let target = softmax_unchecked(target_logits);
    let log_pred = log_softmax_unchecked(&s);
    let value = -target.iter().zip(&log_pred).map(|(t, l)| t * l).sum::<f64>();
    let grad: Vec<f64> = log_pred.iter().zip(&target).map(|(l, t)| l.exp() - t).collect();
    Ok(LossValue { value, gradient: scatter(student_scores.len(), sub, &grad) })
}

/// Cross-entropy between teacher and student top-one distributions over the
/// sublist.
pub fn listnet_loss(student_scores: &[f64], teacher_scores: &[f64], sub: &Sublist) -> Result<LossValue> {
    let t = gather(teacher_scores, sub)?;
    listnet_from_targets(student_scores, &t, sub)
}

/// [`listnet_loss`] with teacher scores perturbed by `β·Gumbel(0,1)` noise.
pub fn stlistnet_loss(
    student_scores: &[f64],
    teacher_scores: &[f64],
    sub: &Sublist,
    beta: f64,
    rng: &mut RngState,
) -> Result<LossValue> {
    if !(beta >= 0.0) {
        return Err(arg_err(format!("beta must be non-negative, got {beta}")));
    }
    let mut t = gather(teacher_scores, sub)?;
    if beta > 0.0 {
        for v in &mut t {
            *v += beta * rng.gumbel();
        }
    }
    listnet_from_targets(student_scores, &t, sub)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaVariant {
    Ranknet,
    Ndcg1,
    Ndcg2,
    Ndcg2pp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaWeighting {
    pub variant: LambdaVariant,
    pub sigma: f64,
    pub mu: f64,
}

impl Default for LambdaWeighting {
    fn default() -> Self {
        LambdaWeighting { variant: LambdaVariant::Ranknet, sigma: 1.0, mu: 5.0 }
    }
}

fn discount(rank: usize) -> f64 {
    (1.0 + rank as f64).log2()
}

/// `softplus(x) = ln(1 + eˣ)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Metric-weighted pairwise logistic loss over the sublist.
///
/// Relevance decays linearly with teacher position (`rel = n − position`,
/// 1-based) and enters through gains `(2^rel − 1)/maxDCG`. Rank discounts use
/// the student's current order within the sublist. Weights are held constant
/// when differentiating.
pub fn lambda_loss(
    student_scores: &[f64],
    teacher_scores: &[f64],
    sub: &Sublist,
    weighting: &LambdaWeighting,
) -> Result<LossValue> {
    let n = sub.len();
    if n < 2 {
        return Err(arg_err(format!("lambda loss needs a sublist of at least 2, got {n}")));
    }
    if !(weighting.sigma > 0.0) {
        return Err(arg_err("sigma must be positive"));
    }
    let s = gather(student_scores, sub)?;
    let t = gather(teacher_scores, sub)?;

    let raw_gain: Vec<f64> = (0..n).map(|p| 2f64.powi((n - 1 - p) as i32) - 1.0).collect();
    let max_dcg: f64 = raw_gain.iter().enumerate().map(|(p, g)| g / discount(p + 1)).sum();
    let gain: Vec<f64> = raw_gain.iter().map(|g| g / max_dcg).collect();
    let mut student_rank = vec![0usize; n];
    for (r, &i) in argsort_desc(&s).iter().enumerate() {
        student_rank[i] = r + 1;
    }

    let sigma = weighting.sigma;
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if !(t[i] > t[j]) {
                continue;
            }
            let (ri, rj) = (student_rank[i], student_rank[j]);
            let gap = ri.abs_diff(rj);
            let delta = (1.0 / discount(gap) - 1.0 / discount(gap + 1)).abs();
            let w = match weighting.variant {
                LambdaVariant::Ranknet => 1.0,
                LambdaVariant::Ndcg1 => gain[i] / discount(ri),
                LambdaVariant::Ndcg2 => (gain[i] - gain[j]).abs() * delta,
                LambdaVariant::Ndcg2pp => {
                    let rho = (1.0 / discount(ri) - 1.0 / discount(rj)).abs();
                    (gain[i] - gain[j]).abs() * (rho + weighting.mu * delta)
                }
            };
            if w == 0.0 {
                continue;
            }
            let d = sigma * (s[i] - s[j]);
            value += w * softplus(-d) / LN_2;
            let g = -w * sigma * sigmoid(-d) / LN_2;
            grad[i] += g;
            grad[j] -= g;
        }
    }
    Ok(LossValue { value, gradient: scatter(student_scores.len(), sub, &grad) })
}

/// Listwise loss identifiers used in configs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListwiseLoss {
    ListMle,
    ListNet,
    StListNet,
    Lambda(LambdaVariant),
}

impl FromStr for ListwiseLoss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "listmle" => ListwiseLoss::ListMle,
            "listnet" => ListwiseLoss::ListNet,
            "stlistnet" => ListwiseLoss::StListNet,
            "lambda:ranknet" => ListwiseLoss::Lambda(LambdaVariant::Ranknet),
            "lambda:ndcg1" => ListwiseLoss::Lambda(LambdaVariant::Ndcg1),
            "lambda:ndcg2" => ListwiseLoss::Lambda(LambdaVariant::Ndcg2),
            "lambda:ndcg2pp" => ListwiseLoss::Lambda(LambdaVariant::Ndcg2pp),
            other => return Err(arg_err(format!("unknown listwise loss '{other}'"))),
        })
    }
}

impl fmt::Display for ListwiseLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ListwiseLoss::ListMle => "listmle",
            ListwiseLoss::ListNet => "listnet",
            ListwiseLoss::StListNet => "stlistnet",
            ListwiseLoss::Lambda(LambdaVariant::Ranknet) => "lambda:ranknet",
            ListwiseLoss::Lambda(LambdaVariant::Ndcg1) => "lambda:ndcg1",
            ListwiseLoss::Lambda(LambdaVariant::Ndcg2) => "lambda:ndcg2",
            ListwiseLoss::Lambda(LambdaVariant::Ndcg2pp) => "lambda:ndcg2pp",
        })
    }
}

impl Serialize for ListwiseLoss {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ListwiseLoss {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Samples a fresh sublist from `ranking` and evaluates `loss` on it.
/// `weighting.variant` is overridden by the variant named in `loss`.
#[allow(clippy::too_many_arguments)]
pub fn listwise_rank_loss(
    student_scores: &[f64],
    ranking: &RankedList,
    plan: &SamplingPlan,
    loss: ListwiseLoss,
    beta: f64,
    weighting: &LambdaWeighting,
    rng: &mut RngState,
) -> Result<LossValue> {
    if student_scores.len() != ranking.len() {
        return Err(Error::Dimension("student and teacher answer counts differ".into()));
    }
    let sub = sample_sublist(ranking, plan, rng)?;
    let teacher = &ranking.teacher_scores;
    match loss {
        ListwiseLoss::ListMle => listmle_loss(student_scores, &sub),
        ListwiseLoss::ListNet => listnet_loss(student_scores, teacher, &sub),
        ListwiseLoss::StListNet => stlistnet_loss(student_scores, teacher, &sub, beta, rng),
        ListwiseLoss::Lambda(variant) => {
            let w = LambdaWeighting { variant, ..weighting.clone() };
            lambda_loss(student_scores, teacher, &sub, &w)
        }
    }
}
