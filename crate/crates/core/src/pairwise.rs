//! Adaptive pairwise ranking distillation.
//!
//! The teacher's uncertainty about each pairwise preference is the variance
//! of the score difference across MC-dropout passes. An entropic transport
//! plan between answers, with those variances as costs, then rescales a base
//! margin so that confident pairs carry large margins and uncertain pairs
//! small ones. The student is trained with a hinge loss over all teacher
//! preferences inside the truncated answer set.

use serde::{Deserialize, Serialize};

use crate::distill::{argsort_desc, LossValue, RankedList};
use crate::error::{arg_err, Error, Result};
use crate::numerics::{DenseMatrix, DenseVector};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

/// Pairwise variance of MC score differences over the retained answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyMatrix {
    pub matrix: DenseMatrix,
    /// Retained answers, in descending mean MC score.
    pub answer_ids: Vec<usize>,
}

/// Transport plan used to scale the base margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginScalingMatrix {
    pub matrix: DenseMatrix,
    pub answer_ids: Vec<usize>,
    pub rescaled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftMarginSet {
    pub margins: DenseMatrix,
    pub answer_ids: Vec<usize>,
    pub base_margin: f64,
}

/// Margins used by [`pairwise_margin_loss`].
#[derive(Debug, Clone, Copy)]
pub enum PairMargins<'a> {
    Soft(&'a SoftMarginSet),
    Hard { margin: f64, answer_ids: &'a [usize] },
}

impl PairMargins<'_> {
    fn answer_ids(&self) -> &[usize] {
        match self {
            PairMargins::Soft(s) => &s.answer_ids,
            PairMargins::Hard { answer_ids, .. } => answer_ids,
        }
    }

    fn get(&self, p: usize, q: usize) -> f64 {
        match self {
            PairMargins::Soft(s) => s.margins[(p, q)],
            PairMargins::Hard { margin, .. } => *margin,
        }
    }
}

impl UncertaintyMatrix {
    pub fn size(&self) -> usize {
        self.answer_ids.len()
    }

    /// Median of the off-diagonal entries.
    pub fn median_off_diagonal(&self) -> f64 {
        let k = self.size();
        let mut xs: Vec<f64> = (0..k)
            .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|ij| self.matrix[ij])
            .collect();
        if xs.is_empty() {
            return 0.0;
        }
        xs.sort_by(f64::total_cmp);
        let m = xs.len();
        if m % 2 == 1 {
            xs[m / 2]
        } else {
            0.5 * (xs[m / 2 - 1] + xs[m / 2])
        }
    }

    /// `factor ×` the median off-diagonal uncertainty, or 1 when that is zero.
    pub fn relative_lambda(&self, factor: f64) -> f64 {
        let lambda = factor * self.median_off_diagonal();
        if lambda > 0.0 && lambda.is_finite() {
            lambda
        } else {
            1.0
        }
    }
}

/// Population variance of `D^k_ij = p^k_i − p^k_j` across passes, restricted
/// to the `truncate_to` answers with the highest mean score.
pub fn pairwise_uncertainty(mc_scores: &[DenseVector], truncate_to: usize) -> Result<UncertaintyMatrix> {
    let t = mc_scores.len();
    if t < 2 {
        return Err(arg_err(format!("uncertainty needs at least 2 MC passes, got {t}")));
    }
    let n = mc_scores[0].len();
    if mc_scores.iter().any(|s| s.len() != n) {
        return Err(Error::Dimension("MC passes disagree on answer count".into()));
    }
    if truncate_to == 0 || truncate_to > n {
        return Err(arg_err(format!("truncation {truncate_to} outside 1..={n}")));
    }
    let mut mean = vec![0.0; n];
    for s in mc_scores {
        for (m, v) in mean.iter_mut().zip(s.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t as f64);
    let mut answer_ids = argsort_desc(&mean);
    answer_ids.truncate(truncate_to);
    let k = truncate_to;

    // D^k_ij − D̄_ij = c^k_i − c^k_j with c^k = e^k − mean(e), where
    // e^k = p^k − p^1. Shifting by the first pass makes identical passes
    // produce exact zeros.
    let first = &mc_scores[0];
    let shifted: Vec<Vec<f64>> = mc_scores
        .iter()
        .map(|s| answer_ids.iter().map(|&a| s[a] - first[a]).collect())
        .collect();
    let shift_mean: Vec<f64> =
        (0..k).map(|i| shifted.iter().map(|e| e[i]).sum::<f64>() / t as f64).collect();
    let centred: Vec<Vec<f64>> = shifted
        .iter()
        .map(|e| e.iter().zip(&shift_mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut matrix = DenseMatrix::zeros(k, k);
    for c in &centred {
        for i in 0..k {
            for j in (i + 1)..k {
                let d = c[i] - c[j];
                matrix[(i, j)] += d * d;
            }
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            let u = matrix[(i, j)] / t as f64;
            matrix[(i, j)] = u;
            matrix[(j, i)] = u;
        }
    }
    Ok(UncertaintyMatrix { matrix, answer_ids })
}

/// Entropic transport plan with uniform `1/K` marginals over the cost
/// `uncertainty`, self-pairs excluded.
///
/// Alternates `u ← a ⊘ (Ũ v)`, `v ← b ⊘ (Ũᵀ u)` starting from `v = 1` until
/// the mean absolute change of `v` is at most `tol`, then returns
/// `diag(u) Ũ diag(v)`.
pub fn sinkhorn_margins(
    uncertainty: &UncertaintyMatrix,
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<MarginScalingMatrix> {
    let k = uncertainty.size();
    if k < 2 {
        return Err(arg_err(format!("margin adaptation needs K >= 2, got {k}")));
    }
    if !(lambda > 0.0) {
        return Err(arg_err(format!("smoothing factor must be positive, got {lambda}")));
    }
    let mut kernel = DenseMatrix::from_fn(k, k, |i, j| {
        if i == j {
            0.0
        } else {
            (-uncertainty.matrix[(i, j)] / lambda).exp()
        }
    });
    let target = 1.0 / k as f64;
    let kernel_t = kernel.transpose();
    let mut u = vec![target; k];
    let mut v = vec![1.0; k];
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..max_iters {
        let kv = kernel.matvec(&v)?;
        for (ui, d) in u.iter_mut().zip(kv.iter()) {
            *ui = target / d;
        }
        let ku = kernel_t.matvec(&u)?;
        let next: Vec<f64> = ku.iter().map(|d| target / d).collect();
        residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum::<f64>() / k as f64;
        v = next;
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence { iterations: max_iters, residual });
    }
    for i in 0..k {
        for (j, w) in kernel.row_mut(i).iter_mut().enumerate() {
            *w *= u[i] * v[j];
        }
    }
    Ok(MarginScalingMatrix {
        matrix: kernel,
        answer_ids: uncertainty.answer_ids.clone(),
        rescaled: false,
    })
}

/// The plan with every off-diagonal entry equal to `1/(K(K−1))`.
pub fn uniform_plan(answer_ids: &[usize]) -> MarginScalingMatrix {
    let k = answer_ids.len();
    let w = if k > 1 { 1.0 / (k * (k - 1)) as f64 } else { 0.0 };
    MarginScalingMatrix {
        matrix: DenseMatrix::from_fn(k, k, |i, j| if i == j { 0.0 } else { w }),
        answer_ids: answer_ids.to_vec(),
        rescaled: false,
    }
}

/// `m · W`, multiplied by `K(K−1)` when `rescale` so the mean off-diagonal
/// margin is `m`.
pub fn soft_margins(scaling: &MarginScalingMatrix, base: f64, rescale: bool) -> Result<SoftMarginSet> {
    if !(base > 0.0) {
        return Err(arg_err(format!("base margin must be positive, got {base}")));
    }
    let k = scaling.answer_ids.len();
    let factor = if rescale { base * (k * k.saturating_sub(1)) as f64 } else { base };
    let mut margins = scaling.matrix.clone();
    margins.values_mut().iter_mut().for_each(|w| *w *= factor);
    Ok(SoftMarginSet { margins, answer_ids: scaling.answer_ids.clone(), base_margin: base })
}

/// Mean hinge `max(0, M_pq − (s_p − s_q))` over retained pairs the teacher
/// strictly orders `p` above `q`.
pub fn pairwise_margin_loss(
    student_scores: &[f64],
    ranking: &RankedList,
    margins: PairMargins<'_>,
) -> Result<LossValue> {
    let ids = margins.answer_ids();
    let teacher = &ranking.teacher_scores;
    let n = student_scores.len();
    if teacher.len() != n || ids.iter().any(|&a| a >= n) {
        return Err(Error::Dimension("margins do not cover the score vector".into()));
    }
    let mut grad = vec![0.0; n];
    let mut value = 0.0;
    let mut pairs = 0usize;
    for (p, &a) in ids.iter().enumerate() {
        for (q, &b) in ids.iter().enumerate() {
            if teacher[a] > teacher[b] {
                pairs += 1;
                let slack = margins.get(p, q) - (student_scores[a] - student_scores[b]);
                if slack > 0.0 {
                    value += slack;
                    grad[a] -= 1.0;
                    grad[b] += 1.0;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(Error::DegenerateInput("teacher scores are tied on every retained pair".into()));
    }
    let scale = 1.0 / pairs as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(LossValue { value: value * scale, gradient: DenseVector::from(grad) })
}
