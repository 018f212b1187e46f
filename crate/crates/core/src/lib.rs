//! Diversity-aware top-K recommendation with a bilateral-branch,
//! two-way adaptive metric learning model.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches files,
//! threads or the command line lives in the companion `taml` crate.
//!
//! Pipeline, bottom to top:
//!
//! * [`corpus`]: implicit-feedback interactions, k-core filtering, the
//!   per-user train/test split and per-user diversity statistics.
//! * [`sampling`]: the uniform sampler feeding the conventional branch, the
//!   reversed category sampler feeding the adaptive branch, and negatives.
//! * [`model`]: one branch's parameter space and its forward pass
//!   (attentive relevance relation, Gaussian diversity relation, two-way
//!   translation distances) plus inference-time branch fusion.
//! * [`gradients`]: exact reverse-mode gradients of the full objective and
//!   a finite-difference checker.
//! * [`training`]: branch-order selection, the adaptive weighting schedule,
//!   the losses and the Adam training loop.
//! * [`metrics`]: Recall, NDCG, ILD, category coverage, F-score and
//!   predicted-diversity error.
//! * [`baselines`]: a plain CML trainer and an MMR re-ranker.

#![no_std]
// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod baselines;
pub mod corpus;
pub mod error;
pub mod gradients;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod sampling;
pub mod synthetic;
pub mod training;

pub use crate::baselines::{mmr_rerank, train_cml, CmlModel, CmlParameters, MmrRanker};
pub use crate::corpus::{
    skewness, DiversityProfile, InteractionCorpus, RawCategory, RawInteraction,
};
pub use crate::error::{Error, Result};
pub use crate::metrics::{evaluate, MetricReport, RankedList, Ranker};
pub use crate::model::{AspectProfiles, BranchParameters, ModelSwitches, TamlModel};
pub use crate::sampling::{BranchTag, TrainingBatch};
pub use crate::training::{train, Ablation, EpochRecord, TrainConfig, Trainer};
