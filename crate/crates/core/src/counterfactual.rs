//! Counterfactual datapoints by copying adversely-contributing features
//! from progressively larger sets of nearest training neighbours.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::classifiers::Classifier;
use crate::contrastive::ContrastiveQuery;
use crate::error::{check_point, Error, Result};
use crate::scalar::squared_distance;
use crate::shapley::ShapleyMatrix;
use crate::Scalar;

/// Neighbour budget grows in multiples of this step.
pub const NEIGHBOR_STEP: usize = 50;

/// Exhaustive Euclidean neighbour index over (standardized) training rows.
/// Ties in distance are ordered by training index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborIndex<F: Scalar = f64> {
    points: Vec<F>,
    n_features: usize,
}

impl<F: Scalar> NeighborIndex<F> {
    pub fn new(points: Vec<F>, n_features: usize) -> Result<Self> {
        if n_features == 0 || points.is_empty() || !points.len().is_multiple_of(n_features) {
            return Err(Error::DimensionMismatch {
                expected: n_features,
                actual: points.len(),
            });
        }
        Ok(Self { points, n_features })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.n_features
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn point(&self, i: usize) -> &[F] {
        &self.points[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Every reference index, nearest first.
    pub fn ordering(&self, dp: &[F]) -> Vec<usize> {
        let mut keyed: Vec<(F, usize)> = (0..self.len())
            .map(|i| (squared_distance(self.point(i), dp), i))
            .collect();
        keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1)));
        keyed.into_iter().map(|(_, i)| i).collect()
    }

    /// Indices of the `min(n, len)` nearest reference points.
    pub fn nearest(&self, dp: &[F], n: usize) -> Vec<usize> {
        let mut order = self.ordering(dp);
        order.truncate(n);
        order
    }

    pub fn nearest_points(&self, dp: &[F], n: usize) -> Vec<Vec<F>> {
        self.nearest(dp, n).into_iter().map(|i| self.point(i).to_vec()).collect()
    }
}

/// Takes `neighbor`'s values where `mask` is set and `dp`'s elsewhere.
pub fn mutate<F: Scalar>(dp: &[F], neighbor: &[F], mask: &[bool]) -> Result<Vec<F>> {
    if neighbor.len() != dp.len() || mask.len() != dp.len() {
        return Err(Error::DimensionMismatch {
            expected: dp.len(),
            actual: if neighbor.len() != dp.len() { neighbor.len() } else { mask.len() },
        });
    }
    Ok(dp
        .iter()
        .zip(neighbor)
        .zip(mask)
        .map(|((a, b), m)| if *m { *b } else { *a })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CounterfactualSet<F: Scalar = f64> {
    pub query: ContrastiveQuery<F>,
    /// True where the desired class's attribution is negative.
    pub mutate_mask: Vec<bool>,
    /// Distinct mutants classified as the desired class, in neighbour order.
    pub points: Vec<Vec<F>>,
    /// Mutants classified as the desired class before deduplication.
    pub raw_count: usize,
    pub neighbor_budget_used: usize,
    pub is_fallback: bool,
    pub fallback_point: Option<Vec<F>>,
}

/// Mask of features whose attribution towards `class` is strictly negative.
pub fn mutate_mask<F: Scalar>(shapley: &ShapleyMatrix<F>, class: usize) -> Vec<bool> {
    shapley.class_row(class).iter().map(|v| *v < F::zero()).collect()
}

fn bit_key<F: Scalar>(x: &[F]) -> Vec<u64> {
    x.iter().map(|v| v.as_f64().to_bits()).collect()
}

/// Searches budgets of 50, 100, ... nearest neighbours (capped at the index
/// size) and returns the valid mutants of the first non-empty batch. Falls
/// back to the nearest training point predicted as `desired` when no mutant
/// works or the mask is empty.
pub fn find_counterfactuals<F: Scalar>(
    model: &dyn Classifier<F>,
    dp: &[F],
    desired: usize,
    shapley: &ShapleyMatrix<F>,
    index: &NeighborIndex<F>,
) -> Result<CounterfactualSet<F>> {
    check_point(dp, model.n_features())?;
    if index.n_features() != dp.len() || shapley.n_features() != dp.len() {
        return Err(Error::DimensionMismatch {
            expected: dp.len(),
            actual: index.n_features(),
        });
    }
    let predicted = model.predict(dp)?;
    let query = ContrastiveQuery::new(dp.to_vec(), predicted, desired, model.n_classes())?;
    let mask = mutate_mask(shapley, desired);
    let order = index.ordering(dp);

    let mut budget = 0;
    if mask.iter().any(|&m| m) {
        let mut seen: HashSet<Vec<u64>> = HashSet::new();
        let original = bit_key(dp);
        let mut out = vec![F::zero(); model.n_classes()];
        let mut step = 1;
        while budget < order.len() {
            let next = (NEIGHBOR_STEP * step).min(order.len());
            let mut points = Vec::new();
            let mut raw_count = 0;
            // earlier neighbours produced nothing, so only new ones can
            for &i in &order[budget..next] {
                let mutant = mutate(dp, index.point(i), &mask)?;
                model.proba_into(&mutant, &mut out);
                if crate::scalar::argmax(&out) != desired {
                    continue;
                }
                raw_count += 1;
                let key = bit_key(&mutant);
                if key != original && seen.insert(key) {
                    points.push(mutant);
                }
            }
            budget = next;
            step += 1;
            if !points.is_empty() {
                return Ok(CounterfactualSet {
                    query,
                    mutate_mask: mask,
                    points,
                    raw_count,
                    neighbor_budget_used: budget,
                    is_fallback: false,
                    fallback_point: None,
                });
            }
        }
    }

    let fallback = nearest_with_prediction(model, &order, index, desired)?
        .ok_or(Error::NoCounterfactual(desired))?;
    Ok(CounterfactualSet {
        query,
        mutate_mask: mask,
        points: Vec::new(),
        raw_count: 0,
        neighbor_budget_used: budget,
        is_fallback: true,
        fallback_point: Some(fallback),
    })
}

/// Nearest training point that the model assigns to `desired`.
pub fn fallback_nearest_desired<F: Scalar>(
    index: &NeighborIndex<F>,
    dp: &[F],
    desired: usize,
    model: &dyn Classifier<F>,
) -> Result<Option<Vec<F>>> {
    check_point(dp, index.n_features())?;
    nearest_with_prediction(model, &index.ordering(dp), index, desired)
}

fn nearest_with_prediction<F: Scalar>(
    model: &dyn Classifier<F>,
    order: &[usize],
    index: &NeighborIndex<F>,
    desired: usize,
) -> Result<Option<Vec<F>>> {
    let mut out = vec![F::zero(); model.n_classes()];
    for &i in order {
        let p = index.point(i);
        model.proba_into(p, &mut out);
        if crate::scalar::argmax(&out) == desired {
            return Ok(Some(p.to_vec()));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapley::ShapleyMethod;

    /// Class 1 iff x0 > 0.
    struct Threshold;

    impl Classifier<f64> for Threshold {
        fn n_classes(&self) -> usize {
            2
        }
        fn n_features(&self) -> usize {
            1
        }
        fn proba_into(&self, x: &[f64], out: &mut [f64]) {
            let one = if x[0] > 0.0 { 1.0 } else { 0.0 };
            out[0] = 1.0 - one;
            out[1] = one;
        }
    }

    struct AlwaysZero;

    impl Classifier<f64> for AlwaysZero {
        fn n_classes(&self) -> usize {
            2
        }
        fn n_features(&self) -> usize {
            1
        }
        fn proba_into(&self, _x: &[f64], out: &mut [f64]) {
            out.copy_from_slice(&[1.0, 0.0]);
        }
    }

    fn sv(row_q: Vec<f64>) -> ShapleyMatrix<f64> {
        let d = row_q.len();
        ShapleyMatrix {
            phi: vec![row_q.iter().map(|v| -v).collect(), row_q],
            base_values: vec![0.5, 0.5],
            method: ShapleyMethod::Exact,
            point: vec![0.0; d],
        }
    }

    #[test]
    fn nearest_orders_by_distance_then_index() {
        let idx = NeighborIndex::new(vec![3.0, 1.0, 2.0, -1.0], 1).unwrap();
        assert_eq!(idx.nearest(&[0.0], 4), vec![1, 3, 2, 0]);
        assert_eq!(idx.nearest(&[0.0], 1), vec![1]);
        assert_eq!(idx.nearest(&[0.0], 10).len(), 4);
        assert_eq!(idx.nearest(&[2.0], 1), vec![2]);
        assert_eq!(idx.nearest_points(&[0.0], 2), vec![vec![1.0], vec![-1.0]]);
    }

    #[test]
    fn mutate_cases() {
        let dp = [4.4, 2.9, 1.4, 0.2];
        let nb = [5.0, 3.1, 3.0, 1.1];
        assert_eq!(mutate(&dp, &nb, &[false; 4]).unwrap(), dp.to_vec());
        assert_eq!(mutate(&dp, &nb, &[true; 4]).unwrap(), nb.to_vec());
        assert_eq!(
            mutate(&dp, &nb, &[false, false, true, false]).unwrap(),
            vec![4.4, 2.9, 3.0, 0.2]
        );
        assert!(mutate(&dp, &nb[..3], &[true; 4]).is_err());
    }

    #[test]
    fn threshold_model_by_hand() {
        let idx = NeighborIndex::new(vec![-0.5, 0.5, 2.0], 1).unwrap();
        let set = find_counterfactuals(&Threshold, &[-1.0], 1, &sv(vec![-0.3]), &idx).unwrap();
        assert_eq!(set.points, vec![vec![0.5], vec![2.0]]);
        assert_eq!(set.neighbor_budget_used, 3);
        assert_eq!(set.raw_count, 2);
        assert!(!set.is_fallback);
        assert_eq!(set.mutate_mask, vec![true]);
        assert_eq!(set.query.predicted, 0);
    }

    #[test]
    fn empty_mask_goes_straight_to_fallback() {
        let idx = NeighborIndex::new(vec![-0.5, 0.5, 2.0], 1).unwrap();
        let set = find_counterfactuals(&Threshold, &[-1.0], 1, &sv(vec![0.3]), &idx).unwrap();
        assert!(set.is_fallback);
        assert!(set.points.is_empty());
        assert_eq!(set.fallback_point, Some(vec![0.5]));
        assert_eq!(set.neighbor_budget_used, 0);
    }

    #[test]
    fn unreachable_class_is_an_error() {
        let idx = NeighborIndex::new(vec![-0.5, 0.5, 2.0], 1).unwrap();
        let err = find_counterfactuals(&AlwaysZero, &[-1.0], 1, &sv(vec![-0.3]), &idx).unwrap_err();
        assert!(matches!(err, Error::NoCounterfactual(1)));
    }

    #[test]
    fn desired_equal_to_prediction_is_rejected() {
        let idx = NeighborIndex::new(vec![-0.5, 0.5, 2.0], 1).unwrap();
        let err = find_counterfactuals(&Threshold, &[-1.0], 0, &sv(vec![-0.3]), &idx).unwrap_err();
        assert!(matches!(err, Error::NotContrastive(0)));
    }

    #[test]
    fn fallback_cases() {
        let idx = NeighborIndex::new(vec![-0.5, 0.5, 2.0], 1).unwrap();
        assert_eq!(fallback_nearest_desired(&idx, &[-1.0], 1, &Threshold).unwrap(), Some(vec![0.5]));
        let idx = NeighborIndex::new(vec![0.5, 0.1, -3.0], 1).unwrap();
        assert_eq!(fallback_nearest_desired(&idx, &[0.0], 1, &Threshold).unwrap(), Some(vec![0.1]));
        assert_eq!(fallback_nearest_desired(&idx, &[0.0], 1, &AlwaysZero).unwrap(), None);
    }

    #[test]
    fn budget_grows_in_steps_of_fifty() {
        // 120 negative points near dp, then positives further out
        let mut pts: Vec<f64> = (0..120).map(|i| -1.0 - i as f64 * 0.001).collect();
        pts.extend([5.0, 6.0, 6.0]);
        let idx = NeighborIndex::new(pts, 1).unwrap();
        let set = find_counterfactuals(&Threshold, &[-1.0], 1, &sv(vec![-1.0]), &idx).unwrap();
        assert_eq!(set.neighbor_budget_used, 123);
        // two neighbours share the value 6.0
        assert_eq!(set.points, vec![vec![5.0], vec![6.0]]);
        assert_eq!(set.raw_count, 3);
    }
}
