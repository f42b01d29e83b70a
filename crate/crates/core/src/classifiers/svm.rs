use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingSet;
use crate::error::{Error, Result};
use crate::scalar::softmax_in_place;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            epochs: 200,
        }
    }
}

/// One-vs-rest linear SVM (hinge loss, L2 penalty) trained by seeded
/// Pegasos sub-gradient steps. Probabilities are the softmax of the
/// per-class margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LinearSvm<F: Scalar> {
    n_features: usize,
    /// Row c holds the weights of class c followed by its bias.
    weights: Vec<Vec<F>>,
}

impl<F: Scalar> LinearSvm<F> {
    pub fn fit(train: &TrainingSet<F>, params: &SvmParams, seed: u64) -> Result<Self> {
        if !(params.lambda > 0.0) || params.epochs == 0 {
            return Err(Error::InvalidHyperparameters(format!("{params:?}")));
        }
        let d = train.n_features;
        let n = train.len();
        let lambda = F::of(params.lambda);
        let mut weights = Vec::with_capacity(train.n_classes);
        for class in 0..train.n_classes {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(class as u64);
            let mut w = vec![F::zero(); d + 1];
            let mut avg = vec![F::zero(); d + 1];
            let mut averaged = 0usize;
            let mut order: Vec<usize> = (0..n).collect();
            let mut t = 0usize;
            for epoch in 0..params.epochs {
                order.shuffle(&mut rng);
                for &i in &order {
                    t += 1;
                    let eta = F::one() / (lambda * F::of_usize(t));
                    let x = train.row(i);
                    let y = if train.y[i] == class { F::one() } else { -F::one() };
                    let margin = y * margin_of(&w, x);
                    let shrink = F::one() - eta * lambda;
                    for v in w.iter_mut() {
                        *v *= shrink;
                    }
                    if margin < F::one() {
                        for (v, xv) in w.iter_mut().zip(x) {
                            *v += eta * y * *xv;
                        }
                        w[d] += eta * y;
                    }
                }
                if 2 * epoch >= params.epochs {
                    for (a, v) in avg.iter_mut().zip(&w) {
                        *a += *v;
                    }
                    averaged += 1;
                }
            }
            let k = F::of_usize(averaged.max(1));
            weights.push(avg.into_iter().map(|a| a / k).collect());
        }
        Ok(Self {
            n_features: d,
            weights,
        })
    }

    /// Raw decision scores, one per class.
    pub fn margins(&self, x: &[F]) -> Vec<F> {
        self.weights.iter().map(|w| margin_of(w, x)).collect()
    }

    pub(crate) fn proba_into(&self, x: &[F], out: &mut [F]) {
        for (o, w) in out.iter_mut().zip(&self.weights) {
            *o = margin_of(w, x);
        }
        softmax_in_place(out);
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }
}

fn margin_of<F: Scalar>(w: &[F], x: &[F]) -> F {
    let d = x.len();
    w[..d].iter().zip(x).fold(w[d], |acc, (a, b)| acc + *a * *b)
}
