//! Classifier training, data-free generator training, and sampling.

mod adam;
mod classifier;
mod generator;
mod tv;

pub use adam::AdamMoments;
pub use classifier::{
    train_classifier, train_classifier_from, training_accuracy, ClassifierTrainConfig,
    ClassifierTrajectory,
};
pub use generator::{
    sample, t_table, ClassifierEntry, GeneratorTrainConfig, GeneratorTrainState, GeneratorTrainer,
    HistoryRow, Samples, Schedule, StepGraph,
};
pub use tv::{tv_graph, tv_loss};

use crate::autodiff::AutodiffError;
use crate::kkt::KktError;
use crate::models::ModelError;
use crate::quasi::QuasiError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("loss {last_loss} still above threshold after {epochs} epochs")]
    NotConverged {
        epochs: usize,
        last_loss: f64,
        trajectory: Vec<f64>,
    },
    #[error("non-finite {what} at step {step}")]
    NonFinite { step: u64, what: String },
    #[error("non-finite loss at step {step}; state snapshot attached")]
    Diverged {
        step: u64,
        snapshot: Box<GeneratorTrainState>,
    },
    #[error("profile of classifier {classifier} fails verification (deviation {deviation:e})")]
    ProfileInvalid { classifier: usize, deviation: f64 },
    #[error("sampling: {0}")]
    Sampling(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kkt(#[from] KktError),
    #[error(transparent)]
    Quasi(#[from] QuasiError),
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Model(ModelError::Autodiff(e))
    }
}
