//! Frozen per-instance teacher outputs: rankings and, for pairwise
//! distillation, Sinkhorn-scaled soft margins.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, MarginMode, PairwiseConfig, Scheme};
use crate::distill::{teacher_ranking, RankedList};
use crate::error::{Error, Result};
use crate::model::{hex_digest, ScoreModel};
use crate::numerics::RngState;
use crate::pairwise::{pairwise_uncertainty, sinkhorn_margins, soft_margins, uniform_plan, SoftMarginSet};
use crate::parallel;
use crate::synthdata::Dataset;

pub const SNAPSHOT_FORMAT: &str = "rankdistill-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;
const MC_STREAM: u64 = 0x4d43_4452_4f50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub instance_id: usize,
    pub ranking: RankedList,
    pub margins: Option<SoftMarginSet>,
    /// Sinkhorn failed and uniform margins were substituted.
    pub sinkhorn_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSnapshot {
    pub format: String,
    pub version: u32,
    pub teacher_checksum: String,
    /// Digest of the pairwise settings the margins were built with.
    pub margin_key: Option<String>,
    pub entries: Vec<SnapshotEntry>,
}

impl TeacherSnapshot {
    pub fn sinkhorn_fallbacks(&self) -> usize {
        self.entries.iter().filter(|e| e.sinkhorn_fallback).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: TeacherSnapshot = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if s.format != SNAPSHOT_FORMAT || s.version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!(
                "unsupported snapshot {} v{}",
                s.format, s.version
            )));
        }
        Ok(s)
    }

    /// Whether this snapshot was built from `teacher` on `train` with the
    /// pairwise settings of `config`.
    pub fn fits(&self, teacher: &ScoreModel, train: &Dataset, config: &ExperimentConfig) -> bool {
        self.teacher_checksum == teacher.checksum()
            && self.margin_key == margin_key(config)
            && self.entries.len() == train.len()
    }

    /// Hex SHA-256 of the serialized snapshot.
    pub fn checksum(&self) -> String {
        hex_digest(serde_json::to_string(self).expect("snapshot serializes").as_bytes())
    }
}

fn needs_margins(config: &ExperimentConfig) -> bool {
    config.scheme == Scheme::RadiP && config.pairwise.margin_mode == MarginMode::Soft
}

fn margin_key(config: &ExperimentConfig) -> Option<String> {
    needs_margins(config).then(|| {
        let json = serde_json::to_string(&(&config.pairwise, config.seed)).expect("serializes");
        hex_digest(json.as_bytes())
    })
}

fn instance_margins(
    teacher: &ScoreModel,
    features: &[f64],
    p: &PairwiseConfig,
    k: usize,
    rng: &mut RngState,
) -> Result<(SoftMarginSet, bool)> {
    let passes = teacher.mc_dropout_scores(features, p.mc_passes, rng)?;
    let u = pairwise_uncertainty(&passes, k)?;
    let lambda = p.lambda.unwrap_or_else(|| u.relative_lambda(p.lambda_factor));
    let (plan, fallback) = match sinkhorn_margins(&u, lambda, p.sinkhorn_tol, p.sinkhorn_max_iters) {
        Ok(w) => (w, false),
        Err(Error::Convergence { .. }) => (uniform_plan(&u.answer_ids), true),
        Err(e) => return Err(e),
    };
    Ok((soft_margins(&plan, p.base_margin, p.rescale)?, fallback))
}

/// Rankings (and margins when distilling pairwise with soft margins) for
/// every instance of `train`.
pub fn compute_snapshot(
    teacher: &ScoreModel,
    train: &Dataset,
    config: &ExperimentConfig,
) -> Result<TeacherSnapshot> {
    let with_margins = needs_margins(config);
    let k = config.pairwise.truncate_to(teacher.num_answers());
    let base = RngState::new(config.seed, MC_STREAM);
    let entries: Vec<Result<SnapshotEntry>> = parallel::map(&train.instances, |inst| {
        let scores = teacher.forward(&inst.features)?;
        let ranking = teacher_ranking(&scores);
        let (margins, fallback) = if with_margins {
            let mut rng = base.derive(inst.id as u64);
            let (m, f) = instance_margins(teacher, &inst.features, &config.pairwise, k, &mut rng)?;
            (Some(m), f)
        } else {
            (None, false)
        };
        Ok(SnapshotEntry { instance_id: inst.id, ranking, margins, sinkhorn_fallback: fallback })
    });
    Ok(TeacherSnapshot {
        format: SNAPSHOT_FORMAT.into(),
        version: SNAPSHOT_VERSION,
        teacher_checksum: teacher.checksum(),
        margin_key: margin_key(config),
        entries: entries.into_iter().collect::<Result<_>>()?,
    })
}

/// Like [`compute_snapshot`], but replays `cache` when it holds a snapshot
/// of the same teacher built with the same pairwise settings, and writes it
/// otherwise.
pub fn snapshot_teacher(
    teacher: &ScoreModel,
    train: &Dataset,
    config: &ExperimentConfig,
    cache: Option<&Path>,
) -> Result<TeacherSnapshot> {
    if let Some(path) = cache {
        if path.exists() {
            if let Ok(s) = TeacherSnapshot::load(path) {
                if s.fits(teacher, train, config) {
                    return Ok(s);
                }
            }
        }
    }
    let snap = compute_snapshot(teacher, train, config)?;
    if let Some(path) = cache {
        snap.save(path)?;
    }
    Ok(snap)
}
