//! Multistage clinical risk prediction for COVID-19 triage.
//!
//! The pipeline splits a cohort into stratified train/validation/test folds,
//! fits preprocessing on the training fold, runs a randomized hyperparameter
//! search over five model families, selects models on the validation fold,
//! evaluates each selected model once on the test fold with bootstrap
//! uncertainty, and attributes predictive performance to input features.
//!
//! Three tasks share the machinery: SARS-CoV-2 test result on the full
//! cohort, and hospital / ICU admission on the SARS-CoV-2 positive subcohort.

pub mod data;
pub mod explain;
pub mod metrics;
pub mod models;
pub mod preprocess;
pub mod runner;
pub mod seed;
pub mod service;
pub mod synthetic;
pub mod tuner;

pub use data::{CohortTable, Fold, FoldAssignment, SchemaConfig, Task};
pub use models::{Family, Hyperparams, ModelArtifact};
pub use preprocess::{FeatureMatrix, PreprocessorState};
