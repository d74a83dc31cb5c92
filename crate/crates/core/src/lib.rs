// SPDX-License-Identifier: Apache-2.0

//! Conditional diffusion purification for click-through-rate prediction.
//!
//! A category-gated, mean-pooled behavior embedding is treated as a noisy
//! observation of the user's intent. A small denoiser, guided by a fused
//! condition built from query/user/item, context and scene signals, purifies
//! it over a deterministic reverse trajectory before the click head sees it.
//!
//! Everything runs on a tape-based reverse-mode engine over `f64` vectors
//! ([`autodiff`]), with lazy sparse Adam for embedding tables ([`optim`]).

pub mod autodiff;
pub mod checkpoint;
pub mod condition;
pub mod dataset;
pub mod diffusion;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod param;
pub mod purifier;
pub mod rng;
pub mod synthetic;
pub mod tensor;

pub use autodiff::{Gradients, Graph, Var};
pub use checkpoint::{load_checkpoint, load_checkpoint_matching, save_checkpoint, Checkpoint};
pub use condition::{AblationMode, ConditionBuilder};
pub use dataset::{read_dataset, write_dataset, SampleRecord};
pub use diffusion::{build_linear_schedule, forward_noise, reconstruct_z0, reverse_denoise, NoiseSchedule, ReverseRule};
pub use error::{CdpError, Result};
pub use metrics::{auc, gauc, uauc, MetricReport, ScoredLabel};
pub use model::{CdpConfig, CdpModel, EpochStats, NoiseDraw, PredictionOutput, Trainer, VocabSpec};
pub use param::{ParamGroup, ParamId, ParamStore};
pub use purifier::BehaviorEvent;
pub use synthetic::{generate_world, FieldSpec, World, WorldSpec};
pub use tensor::Tensor;
