//! Tabular classification datasets: CSV ingestion, train/test splitting and
//! per-feature standardization.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Integer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

/// How the label column of a CSV file is located.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
    Last,
}

impl From<&str> for LabelColumn {
    fn from(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        }
    }
}

/// Per-feature affine transform `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Standardization<F: Scalar = f64> {
    pub means: Vec<F>,
    pub stds: Vec<F>,
}

impl<F: Scalar> Standardization<F> {
    pub fn transform(&self, raw: &[F]) -> Vec<F> {
        raw.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| (*x - *m) / *s)
            .collect()
    }

    pub fn inverse(&self, standardized: &[F]) -> Vec<F> {
        standardized
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(z, (m, s))| *z * *s + *m)
            .collect()
    }
}

/// Immutable tabular dataset, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Dataset<F: Scalar = f64> {
    name: String,
    features: Vec<FeatureSpec>,
    values: Vec<F>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    standardization: Option<Standardization<F>>,
}

impl<F: Scalar> Dataset<F> {
    /// Builds a dataset from row-major values, validating every invariant.
    pub fn new(
        name: impl Into<String>,
        features: Vec<FeatureSpec>,
        values: Vec<F>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let d = features.len();
        if d == 0 {
            return Err(Error::NoFeatures);
        }
        let mut seen = HashSet::new();
        for (i, f) in features.iter().enumerate() {
            if f.name.trim().is_empty() {
                return Err(Error::EmptyFeatureName(i));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::DuplicateFeature(f.name.clone()));
            }
        }
        if values.len() != labels.len() * d {
            return Err(Error::InvalidDataset(format!(
                "{} values for {} rows of {} features",
                values.len(),
                labels.len(),
                d
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let c = class_names.len();
        if c < 2 {
            return Err(Error::FewerThanTwoClasses);
        }
        let mut present = vec![false; c];
        for &y in &labels {
            if y >= c {
                return Err(Error::InvalidClass {
                    class: y,
                    n_classes: c,
                });
            }
            present[y] = true;
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(Error::InvalidDataset(format!(
                "class {missing} ({}) has no rows",
                class_names[missing]
            )));
        }
        Ok(Self {
            name: name.into(),
            features,
            values,
            labels,
            class_names,
            standardization: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[F] {
        let d = self.n_features();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[F]> {
        self.values.chunks_exact(self.n_features())
    }

    pub fn standardization(&self) -> Option<&Standardization<F>> {
        self.standardization.as_ref()
    }

    /// SHA-256 over names, values and labels; stable across platforms.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        for f in &self.features {
            h.update(f.name.as_bytes());
            h.update([0u8]);
        }
        for v in &self.values {
            h.update(v.as_f64().to_le_bytes());
        }
        for y in &self.labels {
            h.update((*y as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Copies the selected rows into a training set.
    pub fn select(&self, indices: &[usize]) -> TrainingSet<F> {
        let d = self.n_features();
        let mut x = Vec::with_capacity(indices.len() * d);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.row(i));
            y.push(self.labels[i]);
        }
        TrainingSet {
            x,
            y,
            n_features: d,
            n_classes: self.n_classes(),
        }
    }

    /// Undoes standardization; a no-op copy for raw datasets.
    pub fn to_raw_point(&self, standardized: &[F]) -> Vec<F> {
        match &self.standardization {
            Some(s) => s.inverse(standardized),
            None => standardized.to_vec(),
        }
    }

    pub fn to_standardized_point(&self, raw: &[F]) -> Vec<F> {
        match &self.standardization {
            Some(s) => s.transform(raw),
            None => raw.to_vec(),
        }
    }
}

/// Rows and labels handed to a classifier for fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet<F: Scalar = f64> {
    pub x: Vec<F>,
    pub y: Vec<usize>,
    pub n_features: usize,
    pub n_classes: usize,
}

impl<F: Scalar> TrainingSet<F> {
    pub fn new(x: Vec<F>, y: Vec<usize>, n_features: usize, n_classes: usize) -> Result<Self> {
        if n_features == 0 || x.len() != y.len() * n_features {
            return Err(Error::DimensionMismatch {
                expected: y.len() * n_features,
                actual: x.len(),
            });
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
            return Err(Error::InvalidClass {
                class: bad,
                n_classes,
            });
        }
        Ok(Self {
            x,
            y,
            n_features,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }
}

/// Reads a dataset from a CSV file with a header row.
pub fn load_csv<F: Scalar>(
    path: impl AsRef<Path>,
    label: &LabelColumn,
    class_names: Option<&[String]>,
) -> Result<Dataset<F>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    read_csv(name, file, label, class_names)
}

/// Parses CSV content. Class ids follow first appearance unless
/// `class_names` is given, in which case labels must match those names.
pub fn read_csv<F: Scalar, R: Read>(
    name: impl Into<String>,
    reader: R,
    label: &LabelColumn,
    class_names: Option<&[String]>,
) -> Result<Dataset<F>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let label_idx = match label {
        LabelColumn::Name(n) => headers
            .iter()
            .position(|h| h == n)
            .ok_or_else(|| Error::MissingLabelColumn(n.clone()))?,
        LabelColumn::Index(i) if *i < headers.len() => *i,
        LabelColumn::Index(i) => return Err(Error::MissingLabelColumn(i.to_string())),
        LabelColumn::Last if !headers.is_empty() => headers.len() - 1,
        LabelColumn::Last => return Err(Error::NoFeatures),
    };
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != label_idx).collect();

    let mut names: Vec<String> = class_names.map(<[String]>::to_vec).unwrap_or_default();
    let fixed_names = class_names.is_some();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut integral = vec![true; feature_cols.len()];

    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != headers.len() {
            return Err(Error::Csv(format!(
                "row {row} has {} fields, expected {}",
                record.len(),
                headers.len()
            )));
        }
        for (k, &c) in feature_cols.iter().enumerate() {
            let cell = &record[c];
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::NonNumeric {
                    row,
                    column: headers[c].clone(),
                    value: cell.to_string(),
                })?;
            if v.fract() != 0.0 {
                integral[k] = false;
            }
            values.push(F::of(v));
        }
        let raw_label = record[label_idx].to_string();
        let id = match names.iter().position(|n| *n == raw_label) {
            Some(id) => id,
            None if fixed_names => {
                return Err(Error::UnknownLabel {
                    row,
                    value: raw_label,
                })
            }
            None => {
                names.push(raw_label);
                names.len() - 1
            }
        };
        labels.push(id);
    }

    let features = feature_cols
        .iter()
        .zip(&integral)
        .map(|(&c, &int)| FeatureSpec {
            name: headers[c].clone(),
            kind: if int {
                FeatureKind::Integer
            } else {
                FeatureKind::Continuous
            },
        })
        .collect();
    Dataset::new(name, features, values, labels, names)
}

/// Returns a standardized copy, fitting mean and population std-dev on the
/// training rows of `fit_on`.
pub fn standardize<F: Scalar>(ds: &Dataset<F>, fit_on: &Split) -> Result<Dataset<F>> {
    let d = ds.n_features();
    let rows = &fit_on.train_indices;
    if rows.is_empty() {
        return Err(Error::InvalidDataset("empty training split".into()));
    }
    let n = rows.len() as f64;
    let mut means = Vec::with_capacity(d);
    let mut stds = Vec::with_capacity(d);
    for j in 0..d {
        let mean = rows.iter().map(|&i| ds.row(i)[j].as_f64()).sum::<f64>() / n;
        let var = rows
            .iter()
            .map(|&i| (ds.row(i)[j].as_f64() - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        if !(std > 0.0) || std < 1e-12 * mean.abs().max(1.0) {
            return Err(Error::ZeroVariance(ds.features[j].name.clone()));
        }
        means.push(F::of(mean));
        stds.push(F::of(std));
    }
    let record = Standardization { means, stds };
    let values = ds
        .rows()
        .flat_map(|row| record.transform(row))
        .collect::<Vec<_>>();
    Ok(Dataset {
        values,
        standardization: Some(record),
        ..ds.clone()
    })
}

/// Partition of row indices into train and test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
    pub ratio: f64,
}

/// Deterministic train/test split. Both index lists come back sorted.
pub fn split<F: Scalar>(ds: &Dataset<F>, ratio: f64, seed: u64, stratified: bool) -> Result<Split> {
    split_labels(ds.labels(), ds.n_classes(), ratio, seed, stratified)
}

pub(crate) fn split_labels(
    labels: &[usize],
    n_classes: usize,
    ratio: f64,
    seed: u64,
    stratified: bool,
) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidRatio(ratio));
    }
    let n = labels.len();
    if n < 2 {
        return Err(Error::InvalidDataset("need at least 2 rows to split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let groups: Vec<Vec<usize>> = if stratified {
        let mut g = vec![Vec::new(); n_classes];
        for (i, &y) in labels.iter().enumerate() {
            g[y].push(i);
        }
        if let Some(c) = g.iter().position(|m| m.len() < 2) {
            return Err(Error::ClassTooSmall(c));
        }
        g
    } else {
        vec![(0..n).collect()]
    };
    for mut members in groups {
        members.shuffle(&mut rng);
        let m = members.len();
        let k = ((m as f64) * ratio).round() as usize;
        let k = k.clamp(1, m - 1);
        train.extend_from_slice(&members[..k]);
        test.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train_indices: train,
        test_indices: test,
        seed,
        ratio,
    })
}
