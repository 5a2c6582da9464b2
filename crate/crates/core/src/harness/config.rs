//! Declarative experiment configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::listwise::{LambdaWeighting, ListwiseLoss, SamplingPlan, SamplingScheme};
use crate::metrics::DEFAULT_K;
use crate::model::hex_digest;
use crate::pairwise::{DEFAULT_MAX_ITERS, DEFAULT_TOLERANCE};
use crate::synthdata::{RelevanceMode, TaskSpec};

/// Student training scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "cls-only")]
    ClsOnly,
    #[serde(rename = "radi-p")]
    RadiP,
    #[serde(rename = "radi-l")]
    RadiL,
    #[serde(rename = "label-smoothing")]
    LabelSmoothing,
    #[serde(rename = "pseudo-labeling")]
    PseudoLabeling,
    #[serde(rename = "vanilla-kd")]
    VanillaKd,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::ClsOnly,
        Scheme::RadiP,
        Scheme::RadiL,
        Scheme::LabelSmoothing,
        Scheme::PseudoLabeling,
        Scheme::VanillaKd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::ClsOnly => "cls-only",
            Scheme::RadiP => "radi-p",
            Scheme::RadiL => "radi-l",
            Scheme::LabelSmoothing => "label-smoothing",
            Scheme::PseudoLabeling => "pseudo-labeling",
            Scheme::VanillaKd => "vanilla-kd",
        }
    }

    /// Default weight of the ranking (or distillation) term.
    pub fn default_alpha(self) -> f64 {
        match self {
            Scheme::RadiP => 100.0,
            Scheme::RadiL => 10.0,
            Scheme::VanillaKd => 10.0,
            Scheme::ClsOnly | Scheme::LabelSmoothing | Scheme::PseudoLabeling => 0.0,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudentInit {
    Scratch,
    FromTeacher,
    /// A second classification-only run on the same data with `seed + 1`.
    Individual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginMode {
    Soft,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: vec![64, 64], dropout_rate: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub momentum: f64,
    /// Share of all steps over which the learning rate ramps up linearly.
    pub warmup_fraction: f64,
    /// Keep the epoch with the best validation Acc@1 instead of the last.
    pub select_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 1e-2,
            clip_norm: 1.0,
            batch_size: 32,
            momentum: 0.9,
            warmup_fraction: 0.1,
            select_best: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairwiseConfig {
    pub base_margin: f64,
    /// Fixed Sinkhorn smoothing factor; when absent it is
    /// `lambda_factor ×` the instance's median off-diagonal uncertainty.
    pub lambda: Option<f64>,
    pub lambda_factor: f64,
    pub mc_passes: usize,
    /// Retained answers; `None` keeps `min(N, 50)`.
    pub truncate_k: Option<usize>,
    pub rescale: bool,
    pub margin_mode: MarginMode,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iters: usize,
}

impl Default for PairwiseConfig {
    fn default() -> Self {
        PairwiseConfig {
            base_margin: 1.0,
            lambda: None,
            lambda_factor: 0.1,
            mc_passes: 10,
            truncate_k: None,
            rescale: true,
            margin_mode: MarginMode::Soft,
            sinkhorn_tol: DEFAULT_TOLERANCE,
            sinkhorn_max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

impl PairwiseConfig {
    pub fn truncate_to(&self, n: usize) -> usize {
        self.truncate_k.unwrap_or(50).min(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ListwiseConfig {
    pub plan: SamplingPlan,
    pub loss: ListwiseLoss,
    /// Gumbel noise scale for `stlistnet`.
    pub beta: f64,
    pub weighting: LambdaWeighting,
}

impl Default for ListwiseConfig {
    fn default() -> Self {
        ListwiseConfig {
            plan: SamplingPlan::default(),
            loss: ListwiseLoss::ListMle,
            beta: 1.0,
            weighting: LambdaWeighting::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub sigma: f64,
    pub pseudo_k: usize,
    pub kd_temperature: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { sigma: 0.1, pseudo_k: 1, kd_temperature: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub model: ModelConfig,
    pub teacher: TrainConfig,
    pub student: TrainConfig,
    pub scheme: Scheme,
    /// Weight of the ranking term; `None` takes the scheme default.
    pub alpha_rank: Option<f64>,
    pub pairwise: PairwiseConfig,
    pub listwise: ListwiseConfig,
    pub baselines: BaselineConfig,
    pub student_init: StudentInit,
    pub seed: u64,
    pub eval_k: usize,
    pub relevance: RelevanceMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskSpec::default(),
            model: ModelConfig::default(),
            teacher: TrainConfig::default(),
            student: TrainConfig::default(),
            scheme: Scheme::RadiL,
            alpha_rank: None,
            pairwise: PairwiseConfig::default(),
            listwise: ListwiseConfig::default(),
            baselines: BaselineConfig::default(),
            student_init: StudentInit::Individual,
            seed: 0,
            eval_k: DEFAULT_K,
            relevance: RelevanceMode::Binary,
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

fn check_train(name: &str, t: &TrainConfig) -> Result<()> {
    check(t.lr > 0.0, || format!("{name}.lr must be positive"))?;
    check(t.clip_norm > 0.0, || format!("{name}.clip_norm must be positive"))?;
    check(t.batch_size > 0, || format!("{name}.batch_size must be positive"))?;
    check((0.0..1.0).contains(&t.momentum), || format!("{name}.momentum must lie in [0, 1)"))?;
    check((0.0..=1.0).contains(&t.warmup_fraction), || {
        format!("{name}.warmup_fraction must lie in [0, 1]")
    })
}

impl ExperimentConfig {
    /// Sets both the training seed and the task seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.task.seed = seed;
        self
    }

    pub fn alpha(&self) -> f64 {
        match self.scheme {
            Scheme::ClsOnly => 0.0,
            s => self.alpha_rank.unwrap_or_else(|| s.default_alpha()),
        }
    }

    /// Copy with defaults made explicit, as written to `config.json`.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut c = self.clone();
        c.alpha_rank = Some(self.alpha());
        c.pairwise.truncate_k = Some(self.pairwise.truncate_to(self.task.num_answers));
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate().map_err(|e| Error::Config(e.to_string()))?;
        let n = self.task.num_answers;
        check(!self.model.hidden.contains(&0), || "model.hidden widths must be positive".into())?;
        check((0.0..1.0).contains(&self.model.dropout_rate), || {
            "model.dropout_rate must lie in [0, 1)".into()
        })?;
        check_train("teacher", &self.teacher)?;
        check_train("student", &self.student)?;
        check((1..=n).contains(&self.eval_k), || format!("eval_k must lie in 1..={n}"))?;
        let alpha = self.alpha();
        check(alpha >= 0.0 && alpha.is_finite(), || "alpha_rank must be non-negative".into())?;
        match self.scheme {
            Scheme::RadiP => {
                let p = &self.pairwise;
                check(p.base_margin > 0.0, || "pairwise.base_margin must be positive".into())?;
                check(p.lambda.is_none_or(|l| l > 0.0), || "pairwise.lambda must be positive".into())?;
                check(p.lambda_factor > 0.0, || "pairwise.lambda_factor must be positive".into())?;
                check(p.sinkhorn_tol > 0.0, || "pairwise.sinkhorn_tol must be positive".into())?;
                let k = p.truncate_to(n);
                check(k >= 2, || "pairwise truncation must keep at least 2 answers".into())?;
                if p.margin_mode == MarginMode::Soft {
                    check(p.mc_passes >= 2, || "pairwise.mc_passes must be at least 2".into())?;
                }
            }
            Scheme::RadiL => {
                let l = &self.listwise;
                l.plan.validate(n).map_err(|e| Error::Config(e.to_string()))?;
                check(l.beta >= 0.0, || "listwise.beta must be non-negative".into())?;
                check(l.weighting.sigma > 0.0, || "listwise.weighting.sigma must be positive".into())?;
                if matches!(l.loss, ListwiseLoss::Lambda(_)) {
                    let len = match l.plan.scheme {
                        SamplingScheme::Full => n,
                        _ => l.plan.hot_size + l.plan.cold_size,
                    };
                    check(len >= 2, || "lambda losses need sublists of at least 2".into())?;
                }
            }
            Scheme::LabelSmoothing => check((0.0..1.0).contains(&self.baselines.sigma), || {
                "baselines.sigma must lie in [0, 1)".into()
            })?,
            Scheme::PseudoLabeling => check(self.baselines.pseudo_k <= n, || {
                "baselines.pseudo_k exceeds the answer count".into()
            })?,
            Scheme::VanillaKd => check(self.baselines.kd_temperature > 0.0, || {
                "baselines.kd_temperature must be positive".into()
            })?,
            Scheme::ClsOnly => {}
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        ExperimentConfig::from_json(&std::fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the resolved configuration.
    pub fn checksum(&self) -> String {
        let json = serde_json::to_string(&self.resolved()).expect("config serializes");
        hex_digest(json.as_bytes())
    }

    /// Returns a copy with the dotted field `path` replaced by `value`.
    /// `value` is parsed as JSON when possible and as a string otherwise.
    pub fn with_field(&self, path: &str, value: &str) -> Result<Self> {
        let parsed: Value =
            serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        let mut root = serde_json::to_value(self)?;
        let mut slot = &mut root;
        for key in path.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(key))
                .ok_or_else(|| Error::Config(format!("unknown config field '{path}'")))?;
        }
        *slot = parsed;
        serde_json::from_value(root).map_err(|e| Error::Config(format!("{path}={value}: {e}")))
    }
}
