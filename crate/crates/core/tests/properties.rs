use std::sync::OnceLock;

use proptest::prelude::*;

use cfshap_core::classifiers::Classifier;
use cfshap_core::dataset::{read_csv, split, standardize, LabelColumn};
use cfshap_core::scalar::argmax;
use cfshap_core::shapley::{shapley_exact, shapley_sampled, ValueFunction};
use cfshap_core::{registry, Family, Pipeline, PipelineConfig};

fn iris_pipelines() -> &'static Vec<Pipeline> {
    static CELL: OnceLock<Vec<Pipeline>> = OnceLock::new();
    CELL.get_or_init(|| {
        let ds = registry::builtin("iris").unwrap();
        Family::ALL
            .iter()
            .map(|f| Pipeline::build(ds.clone(), *f, PipelineConfig::default()).unwrap())
            .collect()
    })
}

/// Softmax over `w · x + b` with proptest-chosen weights.
#[derive(Debug)]
struct Linear {
    w: Vec<Vec<f64>>,
}

impl Classifier<f64> for Linear {
    fn n_classes(&self) -> usize {
        self.w.len()
    }
    fn n_features(&self) -> usize {
        self.w[0].len() - 1
    }
    fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, w) in out.iter_mut().zip(&self.w) {
            *o = w[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[x.len()];
        }
        let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        out.iter_mut().for_each(|v| *v = (*v - m).exp());
        let s: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= s);
    }
}

fn linear_case() -> impl Strategy<Value = (Linear, Vec<f64>, Vec<f64>)> {
    (2usize..5, 1usize..6, 1usize..4).prop_flat_map(|(c, d, b)| {
        (
            prop::collection::vec(prop::collection::vec(-2.0..2.0f64, d + 1), c),
            prop::collection::vec(-3.0..3.0f64, d * b),
            prop::collection::vec(-3.0..3.0f64, d),
        )
            .prop_map(|(w, bg, x)| (Linear { w }, bg, x))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_attributions_are_efficient((model, bg, x) in linear_case()) {
        let vf = ValueFunction::new(&model, bg).unwrap();
        let sv = shapley_exact(&vf, &x, 15).unwrap();
        let fx = model.predict_proba(&x).unwrap();
        for (r, f) in sv.reconstructed_output().iter().zip(&fx) {
            prop_assert!((r - f).abs() < 1e-9);
        }
        prop_assert!((sv.base_values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sampled_attributions_are_efficient((model, bg, x) in linear_case(), n in 1usize..40, seed in any::<u64>()) {
        let vf = ValueFunction::new(&model, bg).unwrap();
        let sv = shapley_sampled(&vf, &x, n, seed).unwrap();
        let fx = model.predict_proba(&x).unwrap();
        for (r, f) in sv.reconstructed_output().iter().zip(&fx) {
            prop_assert!((r - f).abs() < 1e-9);
        }
    }

    #[test]
    fn probabilities_lie_on_the_simplex_and_predict_is_argmax(
        x in prop::collection::vec(-4.0..4.0f64, 4)
    ) {
        for p in iris_pipelines() {
            let proba = p.model().predict_proba(&x).unwrap();
            prop_assert!(proba.iter().all(|v| *v >= -1e-9 && *v <= 1.0 + 1e-9));
            prop_assert!((proba.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert_eq!(p.model().predict(&x).unwrap(), argmax(&proba));
        }
    }

    #[test]
    fn split_is_deterministic_disjoint_and_covering(
        labels in prop::collection::vec(0usize..3, 12..80),
        ratio in 0.2..0.8f64,
        seed in any::<u64>(),
    ) {
        // make every class large enough to stratify
        let mut labels = labels;
        labels.extend([0, 0, 1, 1, 2, 2]);
        let mut csv = String::from("x,label\n");
        for (i, y) in labels.iter().enumerate() {
            csv.push_str(&format!("{i},c{y}\n"));
        }
        let ds = read_csv::<f64, _>("p", csv.as_bytes(), &LabelColumn::Last, None).unwrap();
        let a = split(&ds, ratio, seed, true).unwrap();
        let b = split(&ds, ratio, seed, true).unwrap();
        prop_assert_eq!(&a, &b);
        let mut all: Vec<usize> = a.train_indices.iter().chain(&a.test_indices).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        // every class lands on both sides
        for c in 0..ds.n_classes() {
            prop_assert!(a.train_indices.iter().any(|&i| ds.labels()[i] == c));
            prop_assert!(a.test_indices.iter().any(|&i| ds.labels()[i] == c));
        }
    }

    #[test]
    fn standardization_round_trips(seed in any::<u64>(), name in prop::sample::select(vec!["iris", "wine", "mobile"])) {
        let ds = registry::builtin::<f64>(name).unwrap();
        let sp = split(&ds, 0.8, seed, true).unwrap();
        let std = standardize(&ds, &sp).unwrap();
        for i in (0..ds.n_rows()).step_by(37) {
            let back = std.to_raw_point(std.row(i));
            for (a, b) in back.iter().zip(ds.row(i)) {
                prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }
}

#[test]
fn argmax_consistency_on_a_thousand_vectors_per_model() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for p in iris_pipelines() {
        for _ in 0..1000 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let proba = p.model().predict_proba(&x).unwrap();
            assert_eq!(p.model().predict(&x).unwrap(), argmax(&proba));
        }
    }
}
