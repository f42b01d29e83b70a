//! Request and response bodies.

use serde::{Deserialize, Serialize};

use cfshap_core::contrastive::Attribution;
use cfshap_core::shapley::ShapleyMethod;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub n_features: usize,
    pub n_classes: usize,
    pub n_rows: usize,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub dataset: String,
    pub model: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointView {
    /// Dataset row the point was drawn from.
    pub row: usize,
    /// Feature values in the dataset's units.
    pub values: Vec<f64>,
    pub predicted: usize,
    pub predicted_name: String,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub dataset: String,
    pub model: String,
    pub model_fingerprint: String,
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub point: PointView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainRequest {
    pub desired: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyView {
    /// `phi[class][feature]`.
    pub phi: Vec<Vec<f64>>,
    pub base_values: Vec<f64>,
    pub method: ShapleyMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainResponse {
    pub dataset: String,
    pub model: String,
    pub model_fingerprint: String,
    pub row: usize,
    pub point: Vec<f64>,
    pub predicted: usize,
    pub desired: usize,
    pub why_p: Vec<Attribution>,
    pub not_q: Vec<Attribution>,
    pub nl_why_p: String,
    pub nl_not_q: String,
    pub shapley: ShapleyView,
    pub mutate_mask: Vec<bool>,
    /// Counterfactual points in the dataset's units.
    pub counterfactuals: Vec<Vec<f64>>,
    pub neighbor_budget_used: usize,
    pub is_fallback: bool,
    pub fallback_point: Option<Vec<f64>>,
    /// Neither a counterfactual nor a fallback point exists.
    pub empty: bool,
}
