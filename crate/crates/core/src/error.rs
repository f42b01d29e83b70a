use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("non-numeric cell at row {row}, column {column:?}: {value:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("unknown label {value:?} at row {row}")]
    UnknownLabel { row: usize, value: String },
    #[error("label column {0:?} not found")]
    MissingLabelColumn(String),
    #[error("fewer than 2 classes")]
    FewerThanTwoClasses,
    #[error("duplicate feature name {0:?}")]
    DuplicateFeature(String),
    #[error("empty feature name in column {0}")]
    EmptyFeatureName(usize),
    #[error("dataset has no feature columns")]
    NoFeatures,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("checksum mismatch for {name}: expected {expected}, got {actual}")]
    ChecksumMismatch {
        name: String,
        expected: String,
        actual: String,
    },
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("zero-variance column {0:?}")]
    ZeroVariance(String),
    #[error("split ratio {0} outside (0, 1)")]
    InvalidRatio(f64),
    #[error("class {0} has fewer than 2 members, cannot stratify")]
    ClassTooSmall(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite input value at index {0}")]
    NonFinite(usize),
    #[error("class {class} out of range for {n_classes} classes")]
    InvalidClass { class: usize, n_classes: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),
    #[error("degenerate training set: {0}")]
    DegenerateTraining(String),
    #[error("query is not contrastive: desired class {0} is already the prediction")]
    NotContrastive(usize),
    #[error("{dimension} features exceed the exact enumeration cap of {cap}; use sampling")]
    DimensionAboveCap { dimension: usize, cap: usize },
    #[error("invalid Shapley configuration: {0}")]
    InvalidShapleyConfig(String),
    #[error("no counterfactual and no training point predicted as class {0}")]
    NoCounterfactual(usize),
    #[error("model file version {found} does not match supported version {expected}")]
    ModelVersion { found: u32, expected: u32 },
    #[error("serialization failed: {0}")]
    Serialization(String),
    #[error("query {index} (point {point}, desired {desired}) failed: {source}")]
    Query {
        index: usize,
        point: usize,
        desired: usize,
        #[source]
        source: Box<Error>,
    },
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub(crate) fn check_point<F: crate::Scalar>(x: &[F], expected: usize) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: x.len(),
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(())
}
