//! Mini-batch training shared by teacher and student stages.

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::distill::LossValue;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalResult};
use crate::model::{ModelGradient, ScoreModel, Sgd};
use crate::numerics::RngState;
use crate::parallel;
use crate::synthdata::{Dataset, Instance, RelevanceMode};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const STEP_STREAM: u64 = 0x5354_4550;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochEval {
    pub epoch: usize,
    pub result: EvalResult,
}

/// Trajectory of one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub train_loss: Vec<f64>,
    pub val: Vec<EpochEval>,
    pub best_epoch: usize,
}

/// Per-instance objective: `(instance, scores, rng) → loss`. The RNG stream
/// is unique to the (epoch, instance) pair.
pub trait Objective: Sync {
    fn loss(&self, inst: &Instance, scores: &[f64], rng: &mut RngState) -> Result<LossValue>;
}

impl<F> Objective for F
where
    F: Fn(&Instance, &[f64], &mut RngState) -> Result<LossValue> + Sync,
{
    fn loss(&self, inst: &Instance, scores: &[f64], rng: &mut RngState) -> Result<LossValue> {
        self(inst, scores, rng)
    }
}

pub struct EvalSpec<'a> {
    pub val: &'a Dataset,
    pub k: usize,
    pub relevance: RelevanceMode,
}

/// Runs `cfg.epochs` epochs of SGD on `train`, evaluating on the validation
/// split after every epoch. Returns the best-validation model when
/// `cfg.select_best` is set and the last one otherwise.
pub fn train_model(
    mut model: ScoreModel,
    train: &Dataset,
    eval: &EvalSpec<'_>,
    cfg: &TrainConfig,
    objective: &dyn Objective,
    rng: &RngState,
) -> Result<(ScoreModel, StageRecord)> {
    let mut record = StageRecord { train_loss: Vec::new(), val: Vec::new(), best_epoch: 0 };
    if cfg.epochs == 0 || train.is_empty() {
        return Ok((model, record));
    }
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let warmup = ((cfg.warmup_fraction * total_steps as f64).round() as usize).max(1);
    let mut opt = Sgd::new(cfg.momentum);
    let mut best: Option<(f64, ScoreModel)> = None;
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.derive(SHUFFLE_STREAM).derive(epoch as u64).shuffle(&mut order);
        let step_rng = rng.derive(STEP_STREAM).derive(epoch as u64);
        let mut epoch_loss = 0.0;

        for batch in order.chunks(cfg.batch_size) {
            let current = &model;
            let parts: Vec<Result<(f64, ModelGradient)>> = parallel::map(batch, |&i| {
                let inst = &train.instances[i];
                let scores = current.forward(&inst.features)?;
                let mut r = step_rng.derive(inst.id as u64);
                let l = objective.loss(inst, &scores, &mut r)?;
                let g = current.backward(&inst.features, &l.gradient)?;
                Ok((l.value, g))
            });
            let mut grad = ModelGradient::zeros_like(&model);
            let mut batch_loss = 0.0;
            for part in parts {
                let (v, g) = part?;
                batch_loss += v;
                grad.add_scaled(1.0, &g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training { epoch, reason: "non-finite loss".into() });
            }
            grad.scale(1.0 / batch.len() as f64);
            epoch_loss += batch_loss;
            step += 1;
            let lr = cfg.lr * (step as f64 / warmup as f64).min(1.0);
            opt.step(&mut model, &grad, lr, cfg.clip_norm, epoch)?;
        }

        record.train_loss.push(epoch_loss / train.len() as f64);
        let result = evaluate(&model, eval.val, eval.k, eval.relevance)?;
        record.val.push(EpochEval { epoch, result });
        let better = best.as_ref().is_none_or(|(acc, _)| result.acc_at_1 > *acc);
        if cfg.select_best && better {
            best = Some((result.acc_at_1, model.clone()));
            record.best_epoch = epoch;
        }
    }
    match best {
        Some((_, m)) if cfg.select_best => Ok((m, record)),
        _ => {
            record.best_epoch = cfg.epochs;
            Ok((model, record))
        }
    }
}
