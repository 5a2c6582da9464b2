//! Two-stage experiment driver. A teacher is trained on revealed labels and
//! frozen into a snapshot, then a student is distilled from it and evaluated.

mod config;
mod record;
mod snapshot;
mod train;

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

pub use config::{
    BaselineConfig, ExperimentConfig, ListwiseConfig, MarginMode, ModelConfig, PairwiseConfig,
    Scheme, StudentInit, TrainConfig,
};
pub use record::{write_metrics_csv, write_run_outputs, RunRecord, LIBRARY_VERSION};
pub use snapshot::{compute_snapshot, snapshot_teacher, SnapshotEntry, TeacherSnapshot};
pub use train::{train_model, EpochEval, EvalSpec, Objective, StageRecord};

use crate::baselines::{pseudo_labels, smooth_labels, smoothed_cross_entropy, vanilla_kd_loss};
use crate::distill::{classification_loss, combined_loss, LossValue};
use crate::error::{Error, Result};
use crate::listwise::listwise_rank_loss;
use crate::metrics::{evaluate, hidden_recovery};
use crate::model::ScoreModel;
use crate::numerics::RngState;
use crate::pairwise::{pairwise_margin_loss, PairMargins};
use crate::synthdata::{generate_from_spec, Instance, TaskData};

const INIT_STREAM: u64 = 0x494e_4954;
const TEACHER_STREAM: u64 = 0x5445_4143;
const STUDENT_STREAM: u64 = 0x5354_5544;

/// A trained model with its stage trajectory.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: ScoreModel,
    pub record: StageRecord,
}

fn init_model(config: &ExperimentConfig, seed: u64) -> Result<ScoreModel> {
    ScoreModel::init(
        config.task.feature_dim,
        &config.model.hidden,
        config.task.num_answers,
        config.model.dropout_rate,
        &mut RngState::new(seed, INIT_STREAM),
    )
}

fn eval_spec<'a>(config: &ExperimentConfig, data: &'a TaskData) -> EvalSpec<'a> {
    EvalSpec { val: &data.val, k: config.eval_k, relevance: config.relevance }
}

fn cls_objective(inst: &Instance, scores: &[f64], _: &mut RngState) -> Result<LossValue> {
    classification_loss(scores, &inst.revealed_positives)
}

/// Trains a classification-only model on the revealed labels with `seed`.
fn train_classifier(config: &ExperimentConfig, data: &TaskData, train: &TrainConfig, seed: u64) -> Result<Trained> {
    let model = init_model(config, seed)?;
    let rng = RngState::new(seed, TEACHER_STREAM);
    let (model, record) = train_model(model, &data.train, &eval_spec(config, data), train, &cls_objective, &rng)?;
    Ok(Trained { model, record })
}

/// Minimizes the classification loss on revealed labels and keeps the
/// checkpoint with the best validation Acc@1.
pub fn train_teacher(config: &ExperimentConfig, data: &TaskData) -> Result<Trained> {
    config.validate()?;
    train_classifier(config, data, &config.teacher, config.seed)
}

fn snapshot_entry<'a>(snapshot: &'a TeacherSnapshot, inst: &Instance) -> Result<&'a SnapshotEntry> {
    snapshot
        .entries
        .get(inst.id)
        .filter(|e| e.instance_id == inst.id)
        .ok_or_else(|| Error::Config(format!("snapshot has no entry for instance {}", inst.id)))
}

/// Per-instance student objective for `config.scheme`.
fn student_loss(
    config: &ExperimentConfig,
    snapshot: &TeacherSnapshot,
    inst: &Instance,
    scores: &[f64],
    rng: &mut RngState,
) -> Result<LossValue> {
    let alpha = config.alpha();
    let revealed = &inst.revealed_positives;
    match config.scheme {
        Scheme::ClsOnly => classification_loss(scores, revealed),
        Scheme::LabelSmoothing => {
            let target = smooth_labels(revealed, scores.len(), config.baselines.sigma)?;
            smoothed_cross_entropy(scores, &target)
        }
        Scheme::PseudoLabeling => {
            let entry = snapshot_entry(snapshot, inst)?;
            let labels = pseudo_labels(&entry.ranking, revealed, config.baselines.pseudo_k);
            classification_loss(scores, &labels.labels)
        }
        Scheme::VanillaKd => {
            let entry = snapshot_entry(snapshot, inst)?;
            let cls = classification_loss(scores, revealed)?;
            let kd = vanilla_kd_loss(scores, &entry.ranking.teacher_scores, config.baselines.kd_temperature)?;
            Ok(combined_loss(&cls, &kd, alpha))
        }
        Scheme::RadiP => {
            let entry = snapshot_entry(snapshot, inst)?;
            let cls = classification_loss(scores, revealed)?;
            let k = config.pairwise.truncate_to(scores.len());
            let margins = match (&entry.margins, config.pairwise.margin_mode) {
                (Some(m), MarginMode::Soft) => PairMargins::Soft(m),
                (None, MarginMode::Soft) => {
                    return Err(Error::Config("snapshot lacks soft margins".into()))
                }
                (_, MarginMode::Hard) => PairMargins::Hard {
                    margin: config.pairwise.base_margin,
                    answer_ids: entry.ranking.top(k),
                },
            };
            let rank = match pairwise_margin_loss(scores, &entry.ranking, margins) {
                Ok(l) => l,
                Err(Error::DegenerateInput(_)) => LossValue::zero(scores.len()),
                Err(e) => return Err(e),
            };
            Ok(combined_loss(&cls, &rank, alpha))
        }
        Scheme::RadiL => {
            let entry = snapshot_entry(snapshot, inst)?;
            let cls = classification_loss(scores, revealed)?;
            let l = &config.listwise;
            let rank = listwise_rank_loss(scores, &entry.ranking, &l.plan, l.loss, l.beta, &l.weighting, rng)?;
            Ok(combined_loss(&cls, &rank, alpha))
        }
    }
}

/// Initial student parameters for `config.student_init`. The individual
/// pretraining is a cls-only run with seed + 1 under the student schedule.
pub fn initial_student(config: &ExperimentConfig, data: &TaskData, teacher: &ScoreModel) -> Result<ScoreModel> {
    match config.student_init {
        StudentInit::Scratch => init_model(config, config.seed.wrapping_add(1)),
        StudentInit::FromTeacher => Ok(teacher.clone()),
        StudentInit::Individual => {
            Ok(train_classifier(config, data, &config.student, config.seed.wrapping_add(1))?.model)
        }
    }
}

/// Trains the student from `init` with `L_cls + α·L_rank` (or the scheme's
/// substitute) against the frozen `snapshot`.
pub fn distill_student(
    config: &ExperimentConfig,
    data: &TaskData,
    snapshot: &TeacherSnapshot,
    init: ScoreModel,
) -> Result<Trained> {
    config.validate()?;
    if snapshot.entries.len() != data.train.len() {
        return Err(Error::Config("snapshot does not match the training split".into()));
    }
    let rng = RngState::new(config.seed, STUDENT_STREAM);
    let objective = |inst: &Instance, scores: &[f64], r: &mut RngState| {
        student_loss(config, snapshot, inst, scores, r)
    };
    let (model, record) =
        train_model(init, &data.train, &eval_spec(config, data), &config.student, &objective, &rng)?;
    Ok(Trained { model, record })
}

fn key_of<T: serde::Serialize>(value: &T) -> String {
    crate::model::hex_digest(serde_json::to_string(value).expect("serializes").as_bytes())
}

/// Memoizes intermediate artifacts across
/// runs so sweeps only recompute what the swept field affects.
#[derive(Default)]
pub struct Workbench {
    data: HashMap<String, TaskData>,
    classifiers: HashMap<String, Trained>,
    snapshots: HashMap<String, TeacherSnapshot>,
}

impl Workbench {
    pub fn new() -> Self {
        Workbench::default()
    }

    pub fn data(&mut self, config: &ExperimentConfig) -> Result<TaskData> {
        let key = key_of(&config.task);
        if let Some(d) = self.data.get(&key) {
            return Ok(d.clone());
        }
        let d = generate_from_spec(&config.task)?;
        self.data.insert(key, d.clone());
        Ok(d)
    }

    fn classifier(
        &mut self,
        config: &ExperimentConfig,
        data: &TaskData,
        train: &TrainConfig,
        seed: u64,
    ) -> Result<Trained> {
        let key = key_of(&(&config.task, &config.model, train, seed, config.eval_k, config.relevance));
        if let Some(t) = self.classifiers.get(&key) {
            return Ok(t.clone());
        }
        let t = train_classifier(config, data, train, seed)?;
        self.classifiers.insert(key, t.clone());
        Ok(t)
    }

    pub fn teacher(&mut self, config: &ExperimentConfig) -> Result<Trained> {
        config.validate()?;
        let data = self.data(config)?;
        self.classifier(config, &data, &config.teacher, config.seed)
    }

    pub fn snapshot(&mut self, config: &ExperimentConfig, teacher: &ScoreModel) -> Result<TeacherSnapshot> {
        let data = self.data(config)?;
        let probe = compute_snapshot_key(config, teacher);
        if let Some(s) = self.snapshots.get(&probe) {
            return Ok(s.clone());
        }
        let s = compute_snapshot(teacher, &data.train, config)?;
        self.snapshots.insert(probe, s.clone());
        Ok(s)
    }

    pub fn initial_student(&mut self, config: &ExperimentConfig, teacher: &ScoreModel) -> Result<ScoreModel> {
        let data = self.data(config)?;
        match config.student_init {
            StudentInit::Individual => {
                Ok(self.classifier(config, &data, &config.student, config.seed.wrapping_add(1))?.model)
            }
            _ => initial_student(config, &data, teacher),
        }
    }

    /// Teacher → snapshot → distill → evaluate.
    pub fn run(&mut self, config: &ExperimentConfig) -> Result<RunRecord> {
        let start = Instant::now();
        config.validate()?;
        let data = self.data(config)?;
        let teacher = self.teacher(config)?;
        let snapshot = self.snapshot(config, &teacher.model)?;
        let init = self.initial_student(config, &teacher.model)?;
        let (mut record, _) = finish_run(config, &data, &teacher.model, &snapshot, init)?;
        record.wall_clock_seconds = start.elapsed().as_secs_f64();
        Ok(record)
    }
}

/// Distills a student from `init` against `snapshot` and evaluates it next
/// to `teacher`. Returns the run record and the selected student.
pub fn finish_run(
    config: &ExperimentConfig,
    data: &TaskData,
    teacher: &ScoreModel,
    snapshot: &TeacherSnapshot,
    init: ScoreModel,
) -> Result<(RunRecord, ScoreModel)> {
    let start = Instant::now();
    if !snapshot.fits(teacher, &data.train, config) {
        return Err(Error::Config("snapshot does not match this teacher, data and config".into()));
    }
    let before = snapshot.checksum();
    let student = distill_student(config, data, snapshot, init)?;
    debug_assert_eq!(before, snapshot.checksum());
    let teacher_test = evaluate(teacher, &data.test, config.eval_k, config.relevance)?;
    let test = evaluate(&student.model, &data.test, config.eval_k, config.relevance)?;
    let recovery = hidden_recovery(&student.model, &data.train, config.eval_k)?;
    let record = RunRecord {
        library_version: LIBRARY_VERSION.to_string(),
        config_checksum: config.checksum(),
        scheme: config.scheme,
        teacher_checksum: teacher.checksum(),
        teacher_test,
        train_loss: student.record.train_loss,
        val: student.record.val,
        best_epoch: student.record.best_epoch,
        test,
        hidden_positive_recovery: recovery,
        sinkhorn_fallbacks: snapshot.sinkhorn_fallbacks(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((record, student.model))
}

fn compute_snapshot_key(config: &ExperimentConfig, teacher: &ScoreModel) -> String {
    let margins = (config.scheme == Scheme::RadiP && config.pairwise.margin_mode == MarginMode::Soft)
        .then_some((&config.pairwise, config.seed));
    key_of(&(teacher.checksum(), &config.task, margins))
}

/// Runs one full experiment with a fresh workbench.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    Workbench::new().run(config)
}

/// Outcome of one sweep cell.
#[derive(Debug)]
pub struct SweepCell {
    pub value: String,
    pub config: Option<ExperimentConfig>,
    pub outcome: Result<RunRecord>,
}

/// Runs `template` once per value of the dotted field `axis`. Teachers and
/// snapshots are shared between cells whose settings allow it; a failing
/// cell is reported without stopping the sweep.
pub fn run_sweep(template: &ExperimentConfig, axis: &str, values: &[String]) -> Vec<SweepCell> {
    let mut bench = Workbench::new();
    values
        .iter()
        .map(|v| match template.with_field(axis, v) {
            Ok(cfg) => SweepCell { value: v.clone(), outcome: bench.run(&cfg), config: Some(cfg) },
            Err(e) => SweepCell { value: v.clone(), config: None, outcome: Err(e) },
        })
        .collect()
}

/// Runs `config` and writes `run.json`, `metrics.csv` and `config.json`.
pub fn run_to_dir(config: &ExperimentConfig, dir: &Path) -> Result<RunRecord> {
    let record = run_experiment(config)?;
    write_run_outputs(dir, config, &record)?;
    Ok(record)
}
