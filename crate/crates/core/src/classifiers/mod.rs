//! The four classifier families behind one black-box interface.

mod forest;
mod knn;
mod mlp;
mod svm;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use forest::{Forest, ForestParams, Tree, TreeNode};
pub use knn::{Knn, KnnParams};
pub use mlp::{Mlp, MlpParams};
pub use svm::{LinearSvm, SvmParams};

use crate::dataset::TrainingSet;
use crate::error::{check_point, Error, Result};
use crate::scalar::argmax;
use crate::Scalar;

/// Black-box probabilistic classifier over `F`-valued feature vectors.
pub trait Classifier<F: Scalar>: Send + Sync {
    fn n_classes(&self) -> usize;

    fn n_features(&self) -> usize;

    /// Writes class probabilities for `x` into `out` without validating
    /// either slice. Callers guarantee `x.len() == n_features()` and
    /// `out.len() == n_classes()`.
    fn proba_into(&self, x: &[F], out: &mut [F]);

    /// Probabilities along a path: starting from `start`, step `i` sets
    /// coordinate `steps[i].0` to `steps[i].1` and writes the prediction at
    /// the resulting point into `out[i * n_classes()..]`. Unchecked like
    /// [`Classifier::proba_into`].
    fn walk_into(&self, start: &[F], steps: &[(usize, F)], out: &mut [F]) {
        let c = self.n_classes();
        let mut z = start.to_vec();
        for (i, &(j, v)) in steps.iter().enumerate() {
            z[j] = v;
            self.proba_into(&z, &mut out[i * c..(i + 1) * c]);
        }
    }

    fn predict_proba(&self, x: &[F]) -> Result<Vec<F>> {
        check_point(x, self.n_features())?;
        let mut out = vec![F::zero(); self.n_classes()];
        self.proba_into(x, &mut out);
        Ok(out)
    }

    /// Argmax of [`Classifier::predict_proba`], lowest class id on ties.
    fn predict(&self, x: &[F]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Knn,
    Rf,
    Nn,
    Svm,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Svm, Family::Rf, Family::Nn, Family::Knn];

    /// Short display label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Family::Knn => "KNN",
            Family::Rf => "RF",
            Family::Nn => "NN",
            Family::Svm => "SVM",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Family::Knn => "knn",
            Family::Rf => "rf",
            Family::Nn => "nn",
            Family::Svm => "svm",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "knn" => Ok(Family::Knn),
            "rf" => Ok(Family::Rf),
            "nn" => Ok(Family::Nn),
            "svm" => Ok(Family::Svm),
            other => Err(Error::InvalidHyperparameters(format!(
                "unknown model family {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Hyperparameters {
    Knn(KnnParams),
    Rf(ForestParams),
    Nn(MlpParams),
    Svm(SvmParams),
}

impl Hyperparameters {
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Knn => Hyperparameters::Knn(KnnParams::default()),
            Family::Rf => Hyperparameters::Rf(ForestParams::default()),
            Family::Nn => Hyperparameters::Nn(MlpParams::default()),
            Family::Svm => Hyperparameters::Svm(SvmParams::default()),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Hyperparameters::Knn(_) => Family::Knn,
            Hyperparameters::Rf(_) => Family::Rf,
            Hyperparameters::Nn(_) => Family::Nn,
            Hyperparameters::Svm(_) => Family::Svm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FittedState<F: Scalar> {
    Knn(Knn<F>),
    Rf(Forest<F>),
    Nn(Mlp<F>),
    Svm(LinearSvm<F>),
}

/// A trained model of one of the four families. Immutable after `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ClassifierModel<F: Scalar = f64> {
    family: Family,
    hyperparameters: Hyperparameters,
    seed: u64,
    n_classes: usize,
    n_features: usize,
    fingerprint: String,
    state: FittedState<F>,
}

impl<F: Scalar> ClassifierModel<F> {
    pub fn family(&self) -> Family {
        self.family
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyperparameters
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Hash of training data, family, hyperparameters and seed.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn state(&self) -> &FittedState<F> {
        &self.state
    }
}

impl<F: Scalar> Classifier<F> for ClassifierModel<F> {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn proba_into(&self, x: &[F], out: &mut [F]) {
        match &self.state {
            FittedState::Knn(m) => m.proba_into(x, out),
            FittedState::Rf(m) => m.proba_into(x, out),
            FittedState::Nn(m) => m.proba_into(x, out),
            FittedState::Svm(m) => m.proba_into(x, out),
        }
    }

    fn walk_into(&self, start: &[F], steps: &[(usize, F)], out: &mut [F]) {
        match &self.state {
            FittedState::Knn(m) => m.walk_into(start, steps, out),
            FittedState::Rf(m) => m.walk_into(start, steps, out),
            _ => {
                let c = self.n_classes;
                let mut z = start.to_vec();
                for (i, &(j, v)) in steps.iter().enumerate() {
                    z[j] = v;
                    self.proba_into(&z, &mut out[i * c..(i + 1) * c]);
                }
            }
        }
    }
}

/// Trains a model; deterministic in (`train`, `hyperparameters`, `seed`).
pub fn fit<F: Scalar>(
    family: Family,
    train: &TrainingSet<F>,
    hyperparameters: &Hyperparameters,
    seed: u64,
) -> Result<ClassifierModel<F>> {
    if hyperparameters.family() != family {
        return Err(Error::InvalidHyperparameters(format!(
            "{} hyperparameters given for a {} model",
            hyperparameters.family(),
            family
        )));
    }
    if train.is_empty() {
        return Err(Error::DegenerateTraining("no training rows".into()));
    }
    let first = train.y[0];
    if train.y.iter().all(|&y| y == first) {
        return Err(Error::DegenerateTraining("a single class".into()));
    }
    let state = match hyperparameters {
        Hyperparameters::Knn(p) => FittedState::Knn(Knn::fit(train, p)?),
        Hyperparameters::Rf(p) => FittedState::Rf(Forest::fit(train, p, seed)?),
        Hyperparameters::Nn(p) => FittedState::Nn(Mlp::fit(train, p, seed)?),
        Hyperparameters::Svm(p) => FittedState::Svm(LinearSvm::fit(train, p, seed)?),
    };
    Ok(ClassifierModel {
        family,
        hyperparameters: hyperparameters.clone(),
        seed,
        n_classes: train.n_classes,
        n_features: train.n_features,
        fingerprint: fingerprint(family, train, hyperparameters, seed),
        state,
    })
}

fn fingerprint<F: Scalar>(
    family: Family,
    train: &TrainingSet<F>,
    hyperparameters: &Hyperparameters,
    seed: u64,
) -> String {
    let mut h = Sha256::new();
    h.update(family.key().as_bytes());
    h.update(serde_json::to_vec(hyperparameters).expect("hyperparameters serialize"));
    h.update(seed.to_le_bytes());
    h.update((train.n_features as u64).to_le_bytes());
    h.update((train.n_classes as u64).to_le_bytes());
    h.update(std::any::type_name::<F>().as_bytes());
    for v in &train.x {
        h.update(v.as_f64().to_le_bytes());
    }
    for y in &train.y {
        h.update((*y as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct ModelFile<F: Scalar> {
    format_version: u32,
    model: ClassifierModel<F>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

/// Serializes a fitted model as versioned JSON.
pub fn save_model<F: Scalar>(model: &ClassifierModel<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        model: model.clone(),
    };
    let bytes = serde_json::to_vec(&file)?;
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a model written by [`save_model`], refusing other format versions.
pub fn load_model<F: Scalar>(path: impl AsRef<Path>) -> Result<ClassifierModel<F>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let probe: VersionProbe = serde_json::from_slice(&bytes)?;
    if probe.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelVersion {
            found: probe.format_version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let file: ModelFile<F> = serde_json::from_slice(&bytes)?;
    Ok(file.model)
}
