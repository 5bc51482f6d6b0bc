//! The experimental grid: LOSO, cross-dataset, fine-tuning and
//! personalization over labeled window datasets, plus the synthetic
//! generator used for desk-scale verification.

pub mod dataset;
pub mod folds;
pub mod runner;
pub mod spec;
pub mod synth;
pub mod train;

pub use dataset::{Dataset, LabeledWindow, SubjectData};
pub use folds::{loso_folds, Fold};
pub use runner::{run_experiment, DatasetStore, RunOutput, Summary};
pub use spec::{ExperimentSpec, Protocol};
pub use synth::{generate_synthetic, SynthConfig, SynthSubject, SynthTruth};
pub use train::{
    fine_tune, personalize, train_model, Personalization, TrainHistory, TrainingParams,
};
