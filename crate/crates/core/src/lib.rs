//! Gradient-regularized contrastive learning for continual unsupervised
//! domain adaptation.
//!
//! A model adapts through an ordered sequence of unlabeled target domains.
//! Each update follows the gradient of a contrastive loss over a momentum
//! feature bank, projected so that it does not increase (to first order) the
//! classification loss on the labeled source domain or on pseudo-labeled
//! episodic memories of earlier targets.

pub mod bank;
pub mod contrastive;
pub mod datagen;
pub mod error;
pub mod gradproject;
pub mod harness;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod seeds;

pub use bank::FeatureBank;
pub use contrastive::{contrastive_grad, nce_loss, ContrastiveConfig};
pub use datagen::{generate_sequence, Benchmark, DomainSpec, GeneratorKind};
pub use error::{Error, Result};
pub use gradproject::{
    brute_force_project, kkt_report, project_n, project_two, GradientSet, KktReport, ProjectionCase,
    ProjectionResult,
};
pub use harness::{run, AdaptationPlan, BatchRatio, IterationRecord, RunOutput, Strategy};
pub use memory::{build_memory, kmeans, AlignmentSpace, ClusterModel, EpisodicMemory};
pub use metrics::{compute_metrics, evaluate, AccuracyMatrix, Metrics};
pub use model::{Batch, ModelConfig, ModelParams, Origin, Sample, SampleId};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
