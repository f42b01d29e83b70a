//! Dataset -> split -> standardize -> fit -> explain, wired together.

use serde::{Deserialize, Serialize};

use crate::classifiers::{fit, Classifier, ClassifierModel, Family, Hyperparameters};
use crate::contrastive::{build_contrastive, identify_pq, ContrastiveExplanation};
use crate::counterfactual::{find_counterfactuals, CounterfactualSet, NeighborIndex};
use crate::dataset::{split, standardize, Dataset, Split};
use crate::error::{Error, Result};
use crate::shapley::{select_background, ShapleyConfig, ValueFunction};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Seeds the split, model training and background selection.
    pub seed: u64,
    pub split_ratio: f64,
    pub stratified: bool,
    pub shapley: ShapleyConfig,
    /// Family defaults when absent.
    pub hyperparameters: Option<Hyperparameters>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            split_ratio: 0.8,
            stratified: true,
            shapley: ShapleyConfig::default(),
            hyperparameters: None,
        }
    }
}

/// Everything needed to answer contrastive queries for one dataset/model.
#[derive(Debug, Clone)]
pub struct Pipeline<F: Scalar = f64> {
    family: Family,
    config: PipelineConfig,
    raw: Dataset<F>,
    data: Dataset<F>,
    split: Split,
    model: ClassifierModel<F>,
    background: Vec<F>,
    index: NeighborIndex<F>,
}

/// Answer to one "Why P not Q?" query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Explanation<F: Scalar = f64> {
    pub contrastive: ContrastiveExplanation<F>,
    /// `None` when neither a counterfactual nor a fallback point exists.
    pub counterfactuals: Option<CounterfactualSet<F>>,
}

impl<F: Scalar> Pipeline<F> {
    pub fn build(raw: Dataset<F>, family: Family, config: PipelineConfig) -> Result<Self> {
        let split = split(&raw, config.split_ratio, config.seed, config.stratified)?;
        let data = standardize(&raw, &split)?;
        let hyperparameters = config
            .hyperparameters
            .clone()
            .unwrap_or_else(|| Hyperparameters::default_for(family));
        let train = data.select(&split.train_indices);
        let model = fit(family, &train, &hyperparameters, config.seed)?;
        let bg_rows = select_background(
            data.labels(),
            &split.train_indices,
            config.shapley.background_size,
            config.seed,
        );
        let background = data.select(&bg_rows).x;
        let index = NeighborIndex::new(train.x, data.n_features())?;
        Ok(Self {
            family,
            config,
            raw,
            data,
            split,
            model,
            background,
            index,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn raw(&self) -> &Dataset<F> {
        &self.raw
    }

    /// The standardized dataset every computation runs on.
    pub fn data(&self) -> &Dataset<F> {
        &self.data
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn model(&self) -> &ClassifierModel<F> {
        &self.model
    }

    pub fn background(&self) -> &[F] {
        &self.background
    }

    pub fn index(&self) -> &NeighborIndex<F> {
        &self.index
    }

    pub fn value_function(&self) -> Result<ValueFunction<'_, F>> {
        ValueFunction::new(&self.model, self.background.clone())
    }

    pub fn to_standardized(&self, raw_point: &[F]) -> Vec<F> {
        self.data.to_standardized_point(raw_point)
    }

    pub fn to_raw(&self, standardized: &[F]) -> Vec<F> {
        self.data.to_raw_point(standardized)
    }

    /// Explains a standardized point.
    pub fn explain(&self, point: &[F], desired: usize) -> Result<Explanation<F>> {
        let vf = self.value_function()?;
        let id = identify_pq(&vf, point, desired, &self.config.shapley)?;
        let contrastive = build_contrastive(&id.shapley, id.predicted, id.desired, &self.data.feature_names())?;
        let counterfactuals = match find_counterfactuals(&self.model, point, desired, &id.shapley, &self.index) {
            Ok(set) => Some(set),
            Err(Error::NoCounterfactual(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Explanation {
            contrastive,
            counterfactuals,
        })
    }

    /// Explains a point given in the dataset's raw units.
    pub fn explain_raw(&self, raw_point: &[F], desired: usize) -> Result<Explanation<F>> {
        crate::error::check_point(raw_point, self.data.n_features())?;
        self.explain(&self.to_standardized(raw_point), desired)
    }

    pub fn predict_raw(&self, raw_point: &[F]) -> Result<usize> {
        crate::error::check_point(raw_point, self.data.n_features())?;
        self.model.predict(&self.to_standardized(raw_point))
    }
}
