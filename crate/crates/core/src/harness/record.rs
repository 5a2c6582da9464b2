use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Scheme};
use super::train::EpochEval;
use crate::error::Result;
use crate::metrics::EvalResult;

pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything one run produces, as written to `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub library_version: String,
    pub config_checksum: String,
    pub scheme: Scheme,
    pub teacher_checksum: String,
    pub teacher_test: EvalResult,
    /// Mean student training loss per epoch.
    pub train_loss: Vec<f64>,
    pub val: Vec<EpochEval>,
    pub best_epoch: usize,
    pub test: EvalResult,
    /// Share of unrevealed training positives in the student's top-k.
    pub hidden_positive_recovery: f64,
    pub sinkhorn_fallbacks: usize,
    pub wall_clock_seconds: f64,
}

impl RunRecord {
    /// The record with timing zeroed, for replay comparisons.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord { wall_clock_seconds: 0.0, ..self.clone() }
    }
}

/// `epoch,split,acc1,hit5,ndcg5` rows: one per validation epoch, then the
/// test evaluation of the selected model.
pub fn write_metrics_csv(path: &Path, val: &[EpochEval], test: Option<(usize, &EvalResult)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "split", "acc1", "hit5", "ndcg5"])?;
    let mut row = |epoch: usize, split: &str, r: &EvalResult| {
        w.write_record([
            epoch.to_string(),
            split.to_string(),
            r.acc_at_1.to_string(),
            r.hit_at_k.to_string(),
            r.ndcg_at_k.to_string(),
        ])
    };
    for e in val {
        row(e.epoch, "val", &e.result)?;
    }
    if let Some((epoch, r)) = test {
        row(epoch, "test", r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_run_outputs(dir: &Path, config: &ExperimentConfig, record: &RunRecord) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("run.json"), serde_json::to_string_pretty(record)?)?;
    std::fs::write(dir.join("config.json"), config.resolved().to_json_pretty()?)?;
    write_metrics_csv(&dir.join("metrics.csv"), &record.val, Some((record.best_epoch, &record.test)))
}
