//! Hand-derived Shapley values and the attribution axioms.

use cfshap_core::classifiers::Classifier;
use cfshap_core::shapley::{explain, shapley_exact, shapley_sampled, ShapleyMethod, ValueFunction};
use cfshap_core::{registry, Family, Pipeline, PipelineConfig, ShapleyConfig, ShapleyMode};

/// Two classes, `p1 = z0 + z1` and `p0 = 1 - p1`, optionally clipped to [0, 1].
struct Additive {
    clip: bool,
}

impl Classifier<f64> for Additive {
    fn n_classes(&self) -> usize {
        2
    }
    fn n_features(&self) -> usize {
        2
    }
    fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        let s = x[0] + x[1];
        let p = if self.clip { s.clamp(0.0, 1.0) } else { s };
        out[0] = 1.0 - p;
        out[1] = p;
    }
}

/// `p1 = z0`, `p0 = 1 - z0`.
struct FirstFeature;

impl Classifier<f64> for FirstFeature {
    fn n_classes(&self) -> usize {
        2
    }
    fn n_features(&self) -> usize {
        2
    }
    fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0 - x[0];
        out[1] = x[0];
    }
}

/// Three-class softmax over a fixed nonlinear score, symmetric in
/// features 0 and 1 and ignoring feature 3.
struct Symmetric;

impl Classifier<f64> for Symmetric {
    fn n_classes(&self) -> usize {
        3
    }
    fn n_features(&self) -> usize {
        4
    }
    fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        let a = (x[0] * x[1]).tanh() + x[2];
        out[0] = a;
        out[1] = (x[0] + x[1]).sin() - x[2] * x[2];
        out[2] = 0.3 * x[2];
        let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        out.iter_mut().for_each(|v| *v = (*v - m).exp());
        let s: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= s);
    }
}

#[test]
fn unclipped_additive_model_gives_marginal_contributions() {
    let m = Additive { clip: false };
    let vf = ValueFunction::new(&m, vec![0.0, 0.0]).unwrap();
    let sv = shapley_exact(&vf, &[2.0, 3.0], 15).unwrap();
    assert_eq!(sv.phi[1], vec![2.0, 3.0]);
    assert_eq!(sv.phi[0], vec![-2.0, -3.0]);
    assert_eq!(sv.base_values, vec![1.0, 0.0]);
}

#[test]
fn clipped_additive_model_splits_the_saturated_payout() {
    // v({}) = 0, v({0}) = v({1}) = v({0,1}) = 1 for class 1
    let m = Additive { clip: true };
    let vf = ValueFunction::new(&m, vec![0.0, 0.0]).unwrap();
    let sv = shapley_exact(&vf, &[2.0, 3.0], 15).unwrap();
    assert!((sv.phi[1][0] - 0.5).abs() < 1e-12);
    assert!((sv.phi[1][1] - 0.5).abs() < 1e-12);
    assert!((sv.phi[0][0] + 0.5).abs() < 1e-12);
}

#[test]
fn two_by_two_value_function_by_hand() {
    let background = vec![0.2, 0.9, 0.6, 0.1];
    let vf = ValueFunction::new(&FirstFeature, background).unwrap();
    let point = [0.5, 0.3];
    // feature 0 fixed at 0.5 in both composites
    assert_eq!(vf.value(&point, &[0]).unwrap(), vec![0.5, 0.5]);
    // feature 0 from the background: (0.2 + 0.6) / 2
    let v1 = vf.value(&point, &[1]).unwrap();
    assert!((v1[1] - 0.4).abs() < 1e-15 && (v1[0] - 0.6).abs() < 1e-15);
    assert_eq!(vf.value(&point, &[]).unwrap(), vf.base_values().to_vec());
    assert_eq!(vf.value(&point, &[0, 1]).unwrap(), vec![0.5, 0.5]);

    let sv = shapley_exact(&vf, &point, 15).unwrap();
    assert!((sv.phi[1][0] - 0.1).abs() < 1e-15);
    assert_eq!(sv.phi[1][1], 0.0);
}

fn symmetric_case() -> (Vec<f64>, Vec<f64>) {
    // features 0 and 1 equal everywhere; feature 3 constant at 0.25
    let background = vec![
        0.1, 0.1, -0.4, 0.25, //
        -0.7, -0.7, 0.9, 0.25, //
        1.3, 1.3, 0.2, 0.25,
    ];
    (background, vec![0.8, 0.8, -0.3, 0.25])
}

#[test]
fn dummy_feature_gets_zero() {
    let (background, point) = symmetric_case();
    let vf = ValueFunction::new(&Symmetric, background).unwrap();
    let sv = shapley_exact(&vf, &point, 15).unwrap();
    for c in 0..3 {
        assert!(sv.phi[c][3].abs() < 1e-9, "class {c}: {}", sv.phi[c][3]);
    }
}

#[test]
fn exchangeable_features_get_equal_shares() {
    let (background, point) = symmetric_case();
    let vf = ValueFunction::new(&Symmetric, background).unwrap();
    let sv = shapley_exact(&vf, &point, 15).unwrap();
    for c in 0..3 {
        assert!((sv.phi[c][0] - sv.phi[c][1]).abs() < 1e-9, "class {c}");
    }
}

#[test]
fn efficiency_and_probability_coupling() {
    let (background, point) = symmetric_case();
    let vf = ValueFunction::new(&Symmetric, background).unwrap();
    let sv = shapley_exact(&vf, &point, 15).unwrap();
    let fx = Symmetric.predict_proba(&point).unwrap();
    for (r, f) in sv.reconstructed_output().iter().zip(&fx) {
        assert!((r - f).abs() < 1e-12);
    }
    assert!((sv.base_values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((sv.reconstructed_output().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn constant_model_has_zero_attributions_in_both_modes() {
    struct Constant;
    impl Classifier<f64> for Constant {
        fn n_classes(&self) -> usize {
            3
        }
        fn n_features(&self) -> usize {
            3
        }
        fn proba_into(&self, _: &[f64], out: &mut [f64]) {
            out.copy_from_slice(&[0.2, 0.3, 0.5]);
        }
    }
    let vf = ValueFunction::new(&Constant, vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap();
    let exact = shapley_exact(&vf, &[0.5, 0.5, 0.5], 15).unwrap();
    let sampled = shapley_sampled(&vf, &[0.5, 0.5, 0.5], 17, 3).unwrap();
    for sv in [&exact, &sampled] {
        assert!(sv.phi.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(sv.base_values, vec![0.2, 0.3, 0.5]);
    }
}

#[test]
fn sampled_matches_exact_on_iris_at_200_permutations() {
    let ds = registry::builtin("iris").unwrap();
    let p = Pipeline::build(ds, Family::Nn, PipelineConfig::default()).unwrap();
    let vf = p.value_function().unwrap();
    let x = p.data().row(p.split().test_indices[0]);
    let exact = shapley_exact(&vf, x, 15).unwrap();
    let sampled = shapley_sampled(&vf, x, 200, 1).unwrap();
    let worst = exact
        .phi
        .iter()
        .flatten()
        .zip(sampled.phi.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 0.05, "max deviation {worst}");
    let again = shapley_sampled(&vf, x, 200, 1).unwrap();
    assert_eq!(sampled, again);
}

#[test]
fn sampled_efficiency_is_restored() {
    let ds = registry::builtin("iris").unwrap();
    let p = Pipeline::build(ds, Family::Rf, PipelineConfig::default()).unwrap();
    let vf = p.value_function().unwrap();
    let x = p.data().row(p.split().test_indices[3]);
    let sv = shapley_sampled(&vf, x, 7, 9).unwrap();
    let fx = p.model().predict_proba(x).unwrap();
    for (r, f) in sv.reconstructed_output().iter().zip(&fx) {
        assert!((r - f).abs() < 1e-12);
    }
    assert!(matches!(sv.method, ShapleyMethod::Sampled { n_permutations: 7, seed: 9, .. }));
}

#[test]
fn auto_mode_switches_at_the_cap() {
    let cfg = ShapleyConfig {
        mode: ShapleyMode::Auto,
        exact_cap: 3,
        n_permutations: 4,
        ..ShapleyConfig::default()
    };
    let (background, point) = symmetric_case();
    let vf = ValueFunction::new(&Symmetric, background).unwrap();
    let sv = explain(&vf, &point, &cfg).unwrap();
    assert!(matches!(sv.method, ShapleyMethod::Sampled { .. }));
    assert!(shapley_exact(&vf, &point, 3).is_err());
}
