//! Desk-scale laboratory for auditing memorization in small generative
//! models via membership inference.
//!
//! The crate trains toy diffusion and variational autoencoder models on
//! synthetic datasets, exposes them through a gray-box query handle, and
//! scores membership attacks that compare a record's surrogate
//! log-likelihood against the surrogate values of slightly perturbed
//! neighbor records. Everything is seeded and deterministic: the same
//! config and seed reproduce checkpoints, scores, and metrics bit for bit.

pub mod attack;
pub mod config;
pub mod curvature;
pub mod dataset;
pub mod ddpm;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod optim;
pub mod perturb;
pub mod proxy;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod vae;

pub use attack::{AttackClassifier, AttackScore, FluctuationMatrix, Method};
pub use config::ExperimentConfig;
pub use curvature::{AnalyticDensity, DirectionalCurvatureProbe};
pub use dataset::{DataRecord, DatasetConfig, LabeledSplit, RecordKind, SplitRole};
pub use ddpm::{Denoiser, ToyDdpm};
pub use error::{Error, Result};
pub use experiment::{CheckpointRef, ModelRole, ScoreRow, SweepAxis};
pub use metrics::MetricReport;
pub use mlp::{Activation, MlpParams};
pub use model::{Checkpoint, CheckpointSeries, GenModel, GrayBoxHandle, ModelConfig, ModelFamily};
pub use optim::OptimizerState;
pub use perturb::{PerturbationMechanism, StrengthSchedule};
pub use proxy::{ApproxProbability, ProxyConfig};
pub use rng::SeededRng;
pub use schedule::VarianceSchedule;
pub use tensor::Tensor;
pub use vae::ToyVae;
