//! Ranking distillation for classifiers trained on insufficient labels.
//!
//! A teacher classifier is trained on data where only one of several correct
//! answers is annotated. Its answer rankings are then distilled into a student
//! with either an adaptive pairwise margin loss (Monte-Carlo dropout
//! uncertainty, Sinkhorn-scaled soft margins) or a partial listwise loss over
//! a hot/cold sampled sublist. Label-regularization and distribution-distillation
//! schemes are provided for comparison.
//!
//! Per-instance work fans out through [`parallel`], which uses rayon when the
//! `parallel` feature is on and plain iterators otherwise. Reductions always
//! run in instance order, so results are identical with and without the
//! feature.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod distill;
pub mod error;
pub mod harness;
pub mod listwise;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pairwise;
pub mod parallel;
pub mod synthdata;

pub use error::{Error, Result};
