//! Synthetic multi-label tasks with insufficient training labels.
//!
//! Answers are partitioned into clusters. Each answer has a prototype vector
//! near its cluster centre, and an instance's features are the mean of its
//! positive answers' prototypes plus Gaussian noise. All positives of an
//! instance come from one cluster, so a model that learns the cluster
//! structure can rank the unrevealed positives highly even though training
//! shows only one of them.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::numerics::{DenseVector, RngState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub num_answers: usize,
    pub feature_dim: usize,
    pub num_clusters: usize,
    pub positives_min: usize,
    pub positives_max: usize,
    /// Probability that one ground-truth positive is swapped for an answer
    /// from a different cluster.
    pub label_noise: f64,
    /// Standard deviation of answer prototypes around their cluster centre.
    pub prototype_spread: f64,
    /// Standard deviation of the per-instance feature noise.
    pub feature_noise: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            num_answers: 50,
            feature_dim: 32,
            num_clusters: 10,
            positives_min: 1,
            positives_max: 5,
            label_noise: 0.0,
            prototype_spread: 0.5,
            feature_noise: 1.5,
            train_size: 2000,
            val_size: 500,
            test_size: 500,
            seed: 0,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_answers == 0 || self.feature_dim == 0 {
            return Err(arg_err("num_answers and feature_dim must be positive"));
        }
        if self.num_clusters == 0 || self.num_clusters > self.num_answers {
            return Err(arg_err(format!(
                "cluster count {} must be in 1..={}",
                self.num_clusters, self.num_answers
            )));
        }
        if self.positives_min < 1 || self.positives_min > self.positives_max {
            return Err(arg_err("positives range must satisfy 1 <= min <= max"));
        }
        if self.positives_max > self.num_answers {
            return Err(arg_err("positives_max exceeds the number of answers"));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(arg_err("label_noise must lie in [0, 1)"));
        }
        if self.prototype_spread < 0.0 || self.feature_noise < 0.0 {
            return Err(arg_err("noise scales must be non-negative"));
        }
        Ok(())
    }

    /// Chance-level Acc@1: expected positives per instance over N.
    pub fn chance_acc_at_1(&self) -> f64 {
        let sizes = self.positives_min..=self.positives_max;
        let n = sizes.clone().count() as f64;
        sizes.map(|s| s as f64).sum::<f64>() / n / self.num_answers as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: usize,
    pub features: DenseVector,
    /// Sorted ground-truth positives.
    pub full_positives: Vec<usize>,
    /// Sorted labels visible to training.
    pub revealed_positives: Vec<usize>,
    /// Simulated annotator counts, aligned with `full_positives`.
    pub annotation_counts: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelevanceMode {
    #[default]
    Binary,
    AnnotationCounts,
}

impl Instance {
    pub fn hidden_positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.full_positives
            .iter()
            .copied()
            .filter(|a| !self.revealed_positives.contains(a))
    }

    /// Per-answer graded relevance over `n` answers.
    pub fn relevance(&self, n: usize, mode: RelevanceMode) -> Vec<f64> {
        let mut rel = vec![0.0; n];
        for (k, &a) in self.full_positives.iter().enumerate() {
            rel[a] = match mode {
                RelevanceMode::Binary => 1.0,
                RelevanceMode::AnnotationCounts => self.annotation_counts[k] as f64,
            };
        }
        rel
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub task: TaskSpec,
    pub instances: Vec<Instance>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Record {
    Header { format: String, version: u32, split: Split, task: TaskSpec },
    Instance(Instance),
}

const DATASET_FORMAT: &str = "rankdistill-dataset";
const DATASET_VERSION: u32 = 1;

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let header = Record::Header {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            split: self.split,
            task: self.task.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for inst in &self.instances {
            serde_json::to_writer(&mut w, &Record::Instance(inst.clone()))?;
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Dataset> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Format("empty dataset file".into()))??;
        let (split, task) = match serde_json::from_str(&first)? {
            Record::Header { format, version, split, task } => {
                if format != DATASET_FORMAT || version != DATASET_VERSION {
                    return Err(Error::Format(format!("unsupported dataset {format} v{version}")));
                }
                (split, task)
            }
            Record::Instance(_) => return Err(Error::Format("missing header record".into())),
        };
        let mut instances = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line)? {
                Record::Instance(inst) => {
                    if inst.features.len() != task.feature_dim
                        || inst.full_positives.iter().any(|&a| a >= task.num_answers)
                    {
                        return Err(Error::Format(format!("instance {} out of shape", inst.id)));
                    }
                    instances.push(inst)
                }
                Record::Header { .. } => return Err(Error::Format("duplicate header".into())),
            }
        }
        Ok(Dataset { split, task, instances })
    }
}

/// The three splits of one generated task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl TaskData {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.train.write_jsonl(&dir.join("train.jsonl"))?;
        self.val.write_jsonl(&dir.join("val.jsonl"))?;
        self.test.write_jsonl(&dir.join("test.jsonl"))?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<TaskData> {
        Ok(TaskData {
            train: Dataset::read_jsonl(&dir.join("train.jsonl"))?,
            val: Dataset::read_jsonl(&dir.join("val.jsonl"))?,
            test: Dataset::read_jsonl(&dir.join("test.jsonl"))?,
        })
    }
}

struct Geometry {
    clusters: Vec<Vec<usize>>,
    cluster_of: Vec<usize>,
    prototypes: Vec<Vec<f64>>,
}

fn build_geometry(task: &TaskSpec, rng: &mut RngState) -> Geometry {
    let n = task.num_answers;
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut clusters = vec![Vec::new(); task.num_clusters];
    let mut cluster_of = vec![0; n];
    for (pos, &a) in order.iter().enumerate() {
        let c = pos % task.num_clusters;
        clusters[c].push(a);
        cluster_of[a] = c;
    }
    clusters.iter_mut().for_each(|c| c.sort_unstable());
    let centres: Vec<Vec<f64>> = (0..task.num_clusters)
        .map(|_| (0..task.feature_dim).map(|_| rng.normal()).collect())
        .collect();
    let prototypes = (0..n)
        .map(|a| {
            centres[cluster_of[a]]
                .iter()
                .map(|c| c + task.prototype_spread * rng.normal())
                .collect()
        })
        .collect();
    Geometry { clusters, cluster_of, prototypes }
}

fn sample_instance(
    id: usize,
    split: Split,
    task: &TaskSpec,
    geo: &Geometry,
    rng: &mut RngState,
) -> Instance {
    let c = rng.below(task.num_clusters);
    let mut members = geo.clusters[c].clone();
    let hi = task.positives_max.min(members.len());
    let lo = task.positives_min.min(hi);
    let size = lo + rng.below(hi - lo + 1);
    rng.shuffle(&mut members);
    let mut positives: Vec<usize> = members[..size].to_vec();
    if task.label_noise > 0.0 && rng.bernoulli(task.label_noise) {
        let outside: Vec<usize> =
            (0..task.num_answers).filter(|&a| geo.cluster_of[a] != c).collect();
        if !outside.is_empty() {
            let slot = rng.below(positives.len());
            positives[slot] = outside[rng.below(outside.len())];
        }
    }
    let mut features = vec![0.0; task.feature_dim];
    for &a in &positives {
        for (f, p) in features.iter_mut().zip(&geo.prototypes[a]) {
            *f += p / positives.len() as f64;
        }
    }
    for f in &mut features {
        *f += task.feature_noise * rng.normal();
    }
    positives.sort_unstable();
    let annotation_counts = positives.iter().map(|_| 1 + rng.below(3) as u32).collect();
    let revealed_positives = match split {
        Split::Train => vec![positives[rng.below(positives.len())]],
        Split::Val | Split::Test => positives.clone(),
    };
    Instance {
        id,
        features: DenseVector::from(features),
        full_positives: positives,
        revealed_positives,
        annotation_counts,
    }
}

/// Generates train/val/test splits from `task`. The answer geometry uses
/// stream 0 of `rng`'s seed family and each split its own child stream.
pub fn generate(task: &TaskSpec, rng: &RngState) -> Result<TaskData> {
    task.validate()?;
    let mut geo_rng = rng.derive(0);
    let geo = build_geometry(task, &mut geo_rng);
    let make = |split: Split, size: usize, tag: u64| {
        let mut r = rng.derive(tag);
        let instances = (0..size)
            .map(|id| sample_instance(id, split, task, &geo, &mut r))
            .collect();
        Dataset { split, task: task.clone(), instances }
    };
    Ok(TaskData {
        train: make(Split::Train, task.train_size, 1),
        val: make(Split::Val, task.val_size, 2),
        test: make(Split::Test, task.test_size, 3),
    })
}

/// Generates the task from its own `seed` field.
pub fn generate_from_spec(task: &TaskSpec) -> Result<TaskData> {
    generate(task, &RngState::new(task.seed, 0))
}

/// Mean over instances of `|full \ revealed| / |full|`.
pub fn hidden_positive_rate(dataset: &Dataset) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let total: f64 = dataset
        .instances
        .iter()
        .map(|inst| {
            let full: BTreeSet<_> = inst.full_positives.iter().collect();
            let revealed: BTreeSet<_> = inst.revealed_positives.iter().collect();
            full.difference(&revealed).count() as f64 / full.len() as f64
        })
        .sum();
    total / dataset.len() as f64
}
