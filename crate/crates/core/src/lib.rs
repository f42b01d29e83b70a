//! Contrastive and counterfactual explanations for tabular classifiers
//! built on per-class Shapley attributions.
//!
//! The numeric core is generic over [`Scalar`] (`f64` or `f32`); the
//! aliases below fix the scalar to `f64`, which is what the tolerances in
//! the test-suite and the CLI assume.

pub mod classifiers;
pub mod contrastive;
pub mod counterfactual;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod registry;
pub mod scalar;
pub mod shapley;

pub use classifiers::{Classifier, Family, Hyperparameters};
pub use error::{Error, Result};
pub use evaluation::{EvalConfig, EvalSet, EvaluationReport, ReportFormat};
pub use pipeline::PipelineConfig;
pub use scalar::Scalar;
pub use shapley::{ShapleyConfig, ShapleyMode};

pub type Dataset = dataset::Dataset<f64>;
pub type TrainingSet = dataset::TrainingSet<f64>;
pub type ClassifierModel = classifiers::ClassifierModel<f64>;
pub type ShapleyMatrix = shapley::ShapleyMatrix<f64>;
pub type ContrastiveQuery = contrastive::ContrastiveQuery<f64>;
pub type ContrastiveExplanation = contrastive::ContrastiveExplanation<f64>;
pub type CounterfactualSet = counterfactual::CounterfactualSet<f64>;
pub type NeighborIndex = counterfactual::NeighborIndex<f64>;
pub type Pipeline = pipeline::Pipeline<f64>;
pub type Explanation = pipeline::Explanation<f64>;

pub type Dataset32 = dataset::Dataset<f32>;
pub type ClassifierModel32 = classifiers::ClassifierModel<f32>;
pub type ShapleyMatrix32 = shapley::ShapleyMatrix<f32>;
pub type Pipeline32 = pipeline::Pipeline<f32>;
