//! Model-agnostic per-class Shapley attribution.
//!
//! Absent features are marginalized over a background sample: the value of
//! a coalition `S` is the mean, over background rows `b`, of the model's
//! class probabilities at the composite point taking the explained point's
//! values on `S` and `b`'s values elsewhere. Attributions are computed for
//! every class at once, either by enumerating all `2^d` coalitions or by
//! Monte-Carlo sampling of feature permutations.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::Classifier;
use crate::error::{check_point, Error, Result};
use crate::Scalar;

/// Largest feature count for which exact enumeration is allowed.
pub const EXACT_DIMENSION_CAP: usize = 15;
pub const DEFAULT_PERMUTATIONS: usize = 2000;
pub const DEFAULT_BACKGROUND_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapleyMode {
    Exact,
    Sampled,
    /// Exact up to the dimension cap, sampled above it.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyConfig {
    pub mode: ShapleyMode,
    pub n_permutations: usize,
    pub seed: u64,
    pub exact_cap: usize,
    /// Maximum number of training rows in the background sample;
    /// `None` uses the whole training split.
    pub background_size: Option<usize>,
}

impl Default for ShapleyConfig {
    fn default() -> Self {
        Self {
            mode: ShapleyMode::Auto,
            n_permutations: DEFAULT_PERMUTATIONS,
            seed: 1,
            exact_cap: EXACT_DIMENSION_CAP,
            background_size: Some(DEFAULT_BACKGROUND_SIZE),
        }
    }
}

impl ShapleyConfig {
    /// Whether a `d`-feature problem will be solved exactly.
    pub fn uses_exact(&self, d: usize) -> bool {
        match self.mode {
            ShapleyMode::Exact => true,
            ShapleyMode::Sampled => false,
            ShapleyMode::Auto => d <= self.exact_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShapleyMethod {
    Exact,
    Sampled {
        n_permutations: usize,
        seed: u64,
        /// Largest per-class efficiency residual removed by redistribution.
        max_residual: f64,
    },
}

/// Per-class x per-feature attributions for one explained point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ShapleyMatrix<F: Scalar = f64> {
    pub phi: Vec<Vec<F>>,
    pub base_values: Vec<F>,
    pub method: ShapleyMethod,
    pub point: Vec<F>,
}

impl<F: Scalar> ShapleyMatrix<F> {
    pub fn n_classes(&self) -> usize {
        self.phi.len()
    }

    pub fn n_features(&self) -> usize {
        self.point.len()
    }

    pub fn class_row(&self, class: usize) -> &[F] {
        &self.phi[class]
    }

    /// `base_c + sum_j phi[c][j]` for every class.
    pub fn reconstructed_output(&self) -> Vec<F> {
        self.phi
            .iter()
            .zip(&self.base_values)
            .map(|(row, b)| row.iter().fold(*b, |acc, v| acc + *v))
            .collect()
    }
}

/// Background-marginalized coalition value function.
pub struct ValueFunction<'m, F: Scalar> {
    model: &'m dyn Classifier<F>,
    background: Vec<F>,
    n_background: usize,
    base_values: Vec<F>,
}

impl<'m, F: Scalar> ValueFunction<'m, F> {
    /// `background` holds row-major rows of `model.n_features()` values.
    pub fn new(model: &'m dyn Classifier<F>, background: Vec<F>) -> Result<Self> {
        let d = model.n_features();
        if background.is_empty() || !background.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: background.len(),
            });
        }
        check_point(&background, background.len())?;
        let n_background = background.len() / d;
        let mut vf = Self {
            model,
            background,
            n_background,
            base_values: Vec::new(),
        };
        let mut scratch = vec![F::zero(); d];
        let base = vf.value_of_mask(&vf.background[..d], &vec![false; d], &mut scratch);
        vf.base_values = base;
        Ok(vf)
    }

    pub fn model(&self) -> &'m dyn Classifier<F> {
        self.model
    }

    pub fn n_features(&self) -> usize {
        self.model.n_features()
    }

    pub fn n_classes(&self) -> usize {
        self.model.n_classes()
    }

    pub fn n_background(&self) -> usize {
        self.n_background
    }

    pub fn background_row(&self, i: usize) -> &[F] {
        let d = self.n_features();
        &self.background[i * d..(i + 1) * d]
    }

    /// Mean background prediction, the value of the empty coalition.
    pub fn base_values(&self) -> &[F] {
        &self.base_values
    }

    /// Coalition value for a set of feature indices.
    pub fn value(&self, point: &[F], coalition: &[usize]) -> Result<Vec<F>> {
        let d = self.n_features();
        check_point(point, d)?;
        let mut mask = vec![false; d];
        for &j in coalition {
            if j >= d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: j + 1,
                });
            }
            mask[j] = true;
        }
        if !mask.iter().any(|&m| m) {
            return Ok(self.base_values.clone());
        }
        if mask.iter().all(|&m| m) {
            return self.model.predict_proba(point);
        }
        let mut scratch = vec![F::zero(); d];
        Ok(self.value_of_mask(point, &mask, &mut scratch))
    }

    fn value_of_mask(&self, point: &[F], mask: &[bool], scratch: &mut [F]) -> Vec<F> {
        let c = self.n_classes();
        let mut total = vec![F::zero(); c];
        let mut out = vec![F::zero(); c];
        for b in 0..self.n_background {
            let row = self.background_row(b);
            for j in 0..scratch.len() {
                scratch[j] = if mask[j] { point[j] } else { row[j] };
            }
            self.model.proba_into(scratch, &mut out);
            for (t, o) in total.iter_mut().zip(&out) {
                *t += *o;
            }
        }
        let n = F::of_usize(self.n_background);
        total.iter_mut().for_each(|t| *t /= n);
        total
    }
}

/// Exact Shapley values by enumeration of all coalitions.
pub fn shapley_exact<F: Scalar>(vf: &ValueFunction<'_, F>, point: &[F], cap: usize) -> Result<ShapleyMatrix<F>> {
    let d = vf.n_features();
    let c = vf.n_classes();
    check_point(point, d)?;
    if d > cap || d >= usize::BITS as usize {
        return Err(Error::DimensionAboveCap { dimension: d, cap });
    }
    let n_sub = 1usize << d;
    let full = n_sub - 1;
    let mut values = vec![F::zero(); n_sub * c];
    let mut scratch = vec![F::zero(); d];
    let mut mask = vec![false; d];
    for s in 0..n_sub {
        let v = if s == 0 {
            vf.base_values.clone()
        } else if s == full {
            vf.model.predict_proba(point)?
        } else {
            for (j, m) in mask.iter_mut().enumerate() {
                *m = s & (1 << j) != 0;
            }
            vf.value_of_mask(point, &mask, &mut scratch)
        };
        values[s * c..(s + 1) * c].copy_from_slice(&v);
    }

    // w(s) = s! (d - s - 1)! / d! = 1 / (d * C(d - 1, s))
    let mut weights = vec![0.0f64; d];
    let mut binom = 1.0f64;
    for (s, w) in weights.iter_mut().enumerate() {
        *w = 1.0 / (d as f64 * binom);
        binom = binom * (d - 1 - s) as f64 / (s + 1) as f64;
    }
    let weights: Vec<F> = weights.into_iter().map(F::of).collect();

    let mut phi = vec![vec![F::zero(); d]; c];
    for j in 0..d {
        let bit = 1 << j;
        for s in (0..n_sub).filter(|s| s & bit == 0) {
            let w = weights[s.count_ones() as usize];
            let with = &values[(s | bit) * c..(s | bit) * c + c];
            let without = &values[s * c..s * c + c];
            for k in 0..c {
                phi[k][j] += w * (with[k] - without[k]);
            }
        }
    }
    Ok(ShapleyMatrix {
        phi,
        base_values: vf.base_values.clone(),
        method: ShapleyMethod::Exact,
        point: point.to_vec(),
    })
}

/// Permutation-sampling estimate of the Shapley values.
///
/// Each sampled feature order is walked from every background row to the
/// explained point one feature at a time, crediting each feature with the
/// change in class probabilities, so every step is a marginal contribution
/// under the background-averaged value function. Orders come in antithetic
/// pairs (an order and its reverse), and each seeded random order is used
/// in all `d` cyclic rotations so every feature visits every position
/// equally often. Any remaining efficiency residual (rounding only, since
/// the walks telescope) is redistributed in proportion to `|phi|`.
pub fn shapley_sampled<F: Scalar>(
    vf: &ValueFunction<'_, F>,
    point: &[F],
    n_permutations: usize,
    seed: u64,
) -> Result<ShapleyMatrix<F>> {
    let d = vf.n_features();
    let c = vf.n_classes();
    check_point(point, d)?;
    if n_permutations == 0 {
        return Err(Error::InvalidShapleyConfig("n_permutations must be >= 1".into()));
    }
    let model = vf.model;
    let fx = model.predict_proba(point)?;
    let background_out: Vec<Vec<F>> = (0..vf.n_background)
        .map(|b| {
            let mut out = vec![F::zero(); c];
            model.proba_into(vf.background_row(b), &mut out);
            out
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base_order: Vec<usize> = (0..d).collect();
    let mut order = vec![0usize; d];
    let mut acc = vec![vec![F::zero(); d]; c];
    let mut steps: Vec<(usize, F)> = Vec::with_capacity(d);
    let mut path = vec![F::zero(); d.saturating_sub(1) * c];
    let group = 2 * d;

    for k in 0..n_permutations {
        if k % group == 0 {
            base_order.shuffle(&mut rng);
        }
        let shift = (k % group) / 2;
        for (pos, o) in order.iter_mut().enumerate() {
            let p = if k % 2 == 0 { pos } else { d - 1 - pos };
            *o = base_order[(p + shift) % d];
        }
        steps.clear();
        steps.extend(order[..d - 1].iter().map(|&j| (j, point[j])));
        for b in 0..vf.n_background {
            model.walk_into(vf.background_row(b), &steps, &mut path);
            let mut prev: &[F] = &background_out[b];
            for (step, &j) in order.iter().enumerate() {
                let cur: &[F] = if step + 1 == d { &fx } else { &path[step * c..(step + 1) * c] };
                for cls in 0..c {
                    acc[cls][j] += cur[cls] - prev[cls];
                }
                prev = cur;
            }
        }
    }

    let n = F::of_usize(n_permutations * vf.n_background);
    let mut phi: Vec<Vec<F>> = acc
        .into_iter()
        .map(|row| row.into_iter().map(|v| v / n).collect())
        .collect();
    let base = vf.base_values.clone();
    let mut max_residual = 0.0f64;
    for cls in 0..c {
        let residual = fx[cls] - base[cls] - phi[cls].iter().copied().sum::<F>();
        max_residual = max_residual.max(residual.abs().as_f64());
        let total: F = phi[cls].iter().map(|v| v.abs()).sum();
        if total > F::zero() {
            for v in phi[cls].iter_mut() {
                *v += residual * v.abs() / total;
            }
        } else {
            let share = residual / F::of_usize(d);
            phi[cls].iter_mut().for_each(|v| *v += share);
        }
    }
    log::debug!("sampled Shapley residual redistributed: max |r| = {max_residual:e}");
    Ok(ShapleyMatrix {
        phi,
        base_values: base,
        method: ShapleyMethod::Sampled {
            n_permutations,
            seed,
            max_residual,
        },
        point: point.to_vec(),
    })
}

/// Dispatches to exact or sampled attribution per `config`.
pub fn explain<F: Scalar>(vf: &ValueFunction<'_, F>, point: &[F], config: &ShapleyConfig) -> Result<ShapleyMatrix<F>> {
    if config.uses_exact(vf.n_features()) {
        shapley_exact(vf, point, config.exact_cap)
    } else {
        shapley_sampled(vf, point, config.n_permutations, config.seed)
    }
}

/// Deterministic class-stratified subsample of `rows` (indices into
/// `labels`) of at most `size` entries, returned sorted.
pub fn select_background(labels: &[usize], rows: &[usize], size: Option<usize>, seed: u64) -> Vec<usize> {
    let size = match size {
        Some(s) if s < rows.len() => s.max(1),
        _ => {
            let mut all = rows.to_vec();
            all.sort_unstable();
            return all;
        }
    };
    let n_classes = rows.iter().map(|&r| labels[r] + 1).max().unwrap_or(0);
    let mut groups = vec![Vec::new(); n_classes];
    for &r in rows {
        groups[labels[r]].push(r);
    }
    // largest-remainder quotas, ties to the lower class id
    let n = rows.len();
    let exact: Vec<f64> = groups.iter().map(|g| size as f64 * g.len() as f64 / n as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut left = size - quota.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..n_classes).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = exact[a] - quota[a] as f64;
        let rb = exact[b] - quota[b] as f64;
        rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
    });
    for &cls in by_remainder.iter().cycle().take(n_classes * 2) {
        if left == 0 {
            break;
        }
        if quota[cls] < groups[cls].len() {
            quota[cls] += 1;
            left -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(size);
    for (g, q) in groups.iter_mut().zip(&quota) {
        g.shuffle(&mut rng);
        chosen.extend_from_slice(&g[..*q]);
    }
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two classes; P(class 1) = clamp(z0 + z1, 0, 1).
    struct Additive;

    impl Classifier<f64> for Additive {
        fn n_classes(&self) -> usize {
            2
        }
        fn n_features(&self) -> usize {
            2
        }
        fn proba_into(&self, x: &[f64], out: &mut [f64]) {
            let p = (x[0] + x[1]).clamp(0.0, 1.0);
            out[0] = 1.0 - p;
            out[1] = p;
        }
    }

    /// P(class 1) = z0 / 10 for z0 in [0, 10].
    struct FirstFeature;

    impl Classifier<f64> for FirstFeature {
        fn n_classes(&self) -> usize {
            2
        }
        fn n_features(&self) -> usize {
            2
        }
        fn proba_into(&self, x: &[f64], out: &mut [f64]) {
            out[1] = x[0] / 10.0;
            out[0] = 1.0 - out[1];
        }
    }

    struct Constant;

    impl Classifier<f64> for Constant {
        fn n_classes(&self) -> usize {
            3
        }
        fn n_features(&self) -> usize {
            3
        }
        fn proba_into(&self, _x: &[f64], out: &mut [f64]) {
            out.copy_from_slice(&[0.2, 0.3, 0.5]);
        }
    }

    #[test]
    fn value_boundaries() {
        let vf = ValueFunction::new(&FirstFeature, vec![2.0, 0.0, 6.0, 1.0]).unwrap();
        let point = [8.0, 5.0];
        assert_eq!(vf.value(&point, &[]).unwrap(), vf.base_values().to_vec());
        assert_eq!(vf.value(&point, &[0, 1]).unwrap(), FirstFeature.predict_proba(&point).unwrap());
    }

    #[test]
    fn value_by_hand_two_by_two() {
        // background rows (2,0) and (6,1); point (8,5).
        // value({0}): both composites have z0 = 8 -> P1 = 0.8.
        // value({1}): composites (2,5) and (6,5) -> P1 = (0.2 + 0.6) / 2 = 0.4.
        let vf = ValueFunction::new(&FirstFeature, vec![2.0, 0.0, 6.0, 1.0]).unwrap();
        let point = [8.0, 5.0];
        let v0 = vf.value(&point, &[0]).unwrap();
        assert!((v0[1] - 0.8).abs() < 1e-15 && (v0[0] - 0.2).abs() < 1e-15);
        let v1 = vf.value(&point, &[1]).unwrap();
        assert!((v1[1] - 0.4).abs() < 1e-15);
        assert!(vf.value(&point, &[2]).is_err());
    }

    #[test]
    fn additive_model_attributions_equal_feature_values() {
        // background = single zero row; point (0.2, 0.3) keeps the sum
        // inside the clamp so the model is exactly additive.
        let vf = ValueFunction::new(&Additive, vec![0.0, 0.0]).unwrap();
        let sv = shapley_exact(&vf, &[0.2, 0.3], EXACT_DIMENSION_CAP).unwrap();
        assert!((sv.phi[1][0] - 0.2).abs() < 1e-12);
        assert!((sv.phi[1][1] - 0.3).abs() < 1e-12);
        assert!((sv.phi[0][0] + 0.2).abs() < 1e-12);
        assert_eq!(sv.base_values, vec![1.0, 0.0]);
    }

    #[test]
    fn clipped_additive_model_by_enumeration() {
        // point (2, 3): v(empty)=0, v({0})=1, v({1})=1, v({0,1})=1 on class 1,
        // so phi = 1/2 (1 - 0) + 1/2 (1 - 1) = 0.5 for both features.
        let vf = ValueFunction::new(&Additive, vec![0.0, 0.0]).unwrap();
        let sv = shapley_exact(&vf, &[2.0, 3.0], EXACT_DIMENSION_CAP).unwrap();
        assert!((sv.phi[1][0] - 0.5).abs() < 1e-12);
        assert!((sv.phi[1][1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_model_has_zero_attributions() {
        let vf = ValueFunction::new(&Constant, vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap();
        let exact = shapley_exact(&vf, &[9.0, 9.0, 9.0], EXACT_DIMENSION_CAP).unwrap();
        assert!(exact.phi.iter().flatten().all(|v| v.abs() < 1e-15));
        assert_eq!(exact.base_values, vec![0.2, 0.3, 0.5]);
        let sampled = shapley_sampled(&vf, &[9.0, 9.0, 9.0], 17, 3).unwrap();
        assert!(sampled.phi.iter().flatten().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn exact_rejects_dimension_above_cap() {
        let vf = ValueFunction::new(&Constant, vec![0.0; 3]).unwrap();
        assert!(matches!(
            shapley_exact(&vf, &[0.0; 3], 2),
            Err(Error::DimensionAboveCap { dimension: 3, cap: 2 })
        ));
    }

    #[test]
    fn sampled_is_deterministic_and_efficient() {
        let vf = ValueFunction::new(&Additive, vec![0.0, 0.0, 0.1, 0.4, 0.3, 0.0]).unwrap();
        let a = shapley_sampled(&vf, &[0.5, 0.6], 11, 5).unwrap();
        let b = shapley_sampled(&vf, &[0.5, 0.6], 11, 5).unwrap();
        assert_eq!(a, b);
        let fx = Additive.predict_proba(&[0.5, 0.6]).unwrap();
        for (o, f) in a.reconstructed_output().iter().zip(&fx) {
            assert!((o - f).abs() < 1e-12);
        }
        assert!(shapley_sampled(&vf, &[0.5, 0.6], 0, 5).is_err());
    }

    #[test]
    fn background_is_stratified_and_sorted() {
        let labels: Vec<usize> = (0..30).map(|i| usize::from(i >= 20)).collect();
        let rows: Vec<usize> = (0..30).collect();
        let bg = select_background(&labels, &rows, Some(9), 4);
        assert_eq!(bg.len(), 9);
        assert!(bg.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(bg.iter().filter(|&&r| labels[r] == 0).count(), 6);
        assert_eq!(bg, select_background(&labels, &rows, Some(9), 4));
        assert_eq!(select_background(&labels, &rows, None, 4), rows);
        assert_eq!(select_background(&labels, &rows, Some(100), 4), rows);
    }
}
