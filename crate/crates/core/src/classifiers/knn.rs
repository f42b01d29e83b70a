use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::dataset::TrainingSet;
use crate::error::{Error, Result};
use crate::scalar::squared_distance;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 5 }
    }
}

/// Distances per skip block in path evaluation.
const BLOCK: usize = 16;

/// Brute-force Euclidean k-nearest-neighbour vote. Distance ties are broken
/// by training index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Knn<F: Scalar> {
    k: usize,
    n_features: usize,
    n_classes: usize,
    x: Vec<F>,
    y: Vec<usize>,
    #[serde(skip)]
    columns: Columns<F>,
}

/// Column-major copy of the training rows, built on first use.
#[derive(Debug, Clone, Default)]
struct Columns<F>(OnceLock<Vec<F>>);

impl<F> PartialEq for Columns<F> {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl<F: Scalar> Knn<F> {
    pub fn fit(train: &TrainingSet<F>, params: &KnnParams) -> Result<Self> {
        if params.k == 0 || params.k > train.len() {
            return Err(Error::InvalidHyperparameters(format!(
                "k = {} with {} training rows",
                params.k,
                train.len()
            )));
        }
        Ok(Self {
            k: params.k,
            n_features: train.n_features,
            n_classes: train.n_classes,
            x: train.x.clone(),
            y: train.y.clone(),
            columns: Columns::default(),
        })
    }

    pub(crate) fn proba_into(&self, x: &[F], out: &mut [F]) {
        let dist = self.x.chunks_exact(self.n_features).map(|row| squared_distance(row, x));
        self.vote(dist, out);
    }

    /// Path evaluation that updates squared distances one coordinate at a
    /// time instead of recomputing them.
    pub(crate) fn walk_into(&self, start: &[F], steps: &[(usize, F)], out: &mut [F]) {
        let d = self.n_features;
        let c = self.n_classes;
        let mut z = start.to_vec();
        let n = self.y.len();
        let columns = self.columns.0.get_or_init(|| {
            (0..d)
                .flat_map(|j| self.x.chunks_exact(d).map(move |row| row[j]))
                .collect()
        });
        // same per-row summation order as squared_distance, column by column
        let mut dist = vec![F::zero(); n];
        for (j, col) in columns.chunks_exact(n).enumerate() {
            for (dv, t) in dist.iter_mut().zip(col) {
                let a = *t - z[j];
                *dv += a * a;
            }
        }
        let mut best = Vec::with_capacity(self.k + 1);
        let mut block_min = vec![F::zero(); n.div_ceil(BLOCK)];
        for (s, &(j, v)) in steps.iter().enumerate() {
            let old = z[j];
            z[j] = v;
            let col = &columns[j * n..(j + 1) * n];
            for ((block, tb), m) in dist.chunks_mut(BLOCK).zip(col.chunks(BLOCK)).zip(block_min.iter_mut()) {
                let mut lo = F::infinity();
                for (dv, t) in block.iter_mut().zip(tb) {
                    let a = old - *t;
                    let b = v - *t;
                    *dv += b * b - a * a;
                    lo = if *dv < lo { *dv } else { lo };
                }
                *m = lo;
            }
            self.vote_seeded(&dist, &block_min, &mut best, &mut out[s * c..(s + 1) * c]);
        }
    }

    /// Same selection as [`Knn::vote`]: the k smallest `(distance, index)`
    /// pairs are unique, so seeding `best` with the previous step's indices
    /// only raises the bar early and lets whole blocks be skipped.
    fn vote_seeded(&self, dist: &[F], block_min: &[F], best: &mut Vec<(F, usize)>, out: &mut [F]) {
        let k = self.k;
        if best.is_empty() {
            best.extend((0..k).map(|i| (F::zero(), i)));
        }
        for e in best.iter_mut() {
            e.0 = dist[e.1];
        }
        let before = |a: &(F, usize), b: &(F, usize)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);
        best.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1)));
        let mut worst = best[k - 1];
        for (b, (block, &m)) in dist.chunks(BLOCK).zip(block_min).enumerate() {
            if m > worst.0 {
                continue;
            }
            for (o, &d) in block.iter().enumerate() {
                let cand = (d, b * BLOCK + o);
                if before(&cand, &worst) && !best.iter().any(|e| e.1 == cand.1) {
                    let pos = best.partition_point(|e| before(e, &cand));
                    best.insert(pos, cand);
                    best.pop();
                    worst = best[k - 1];
                }
            }
        }
        out.fill(F::zero());
        let share = F::one() / F::of_usize(k);
        for &(_, i) in best.iter() {
            out[self.y[i]] += share;
        }
    }

    fn vote(&self, mut dist: impl Iterator<Item = F>, out: &mut [F]) {
        // (distance, index) of the current k best, kept sorted ascending;
        // inserting after equal distances keeps the lower index first
        let k = self.k;
        let mut best: Vec<(F, usize)> = Vec::with_capacity(k + 1);
        for (i, d) in dist.by_ref().take(k).enumerate() {
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, i));
        }
        let mut worst = best[k - 1].0;
        for (i, d) in dist.enumerate() {
            if d < worst {
                let pos = best.partition_point(|&(bd, _)| bd <= d);
                best.insert(pos, (d, i + k));
                best.pop();
                worst = best[k - 1].0;
            }
        }
        out.fill(F::zero());
        let share = F::one() / F::of_usize(k);
        for &(_, i) in &best {
            out[self.y[i]] += share;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{fit, Classifier, Family, Hyperparameters};

    fn train() -> TrainingSet<f64> {
        // labels: 0 0 1 1 1 1 1
        let x = vec![0.0, 0.0, 0.1, 0.0, 5.0, 5.0, 5.1, 5.0, 5.0, 5.1, 4.9, 5.0, 5.0, 4.9];
        TrainingSet::new(x, vec![0, 0, 1, 1, 1, 1, 1], 2, 2).unwrap()
    }

    #[test]
    fn k1_returns_the_label_of_a_training_point() {
        let t = train();
        let m = fit(Family::Knn, &t, &Hyperparameters::Knn(KnnParams { k: 1 }), 0).unwrap();
        for i in 0..t.len() {
            assert_eq!(m.predict(t.row(i)).unwrap(), t.y[i]);
        }
    }

    #[test]
    fn unanimous_vote_gives_probability_one() {
        let t = train();
        let m = fit(Family::Knn, &t, &Hyperparameters::Knn(KnnParams { k: 5 }), 0).unwrap();
        assert_eq!(m.predict_proba(&[5.0, 5.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(m.n_classes(), 2);
        assert_eq!(m.n_features(), 2);
    }

    #[test]
    fn equidistant_neighbours_resolve_by_training_index() {
        let x = vec![1.0, -1.0];
        let t = TrainingSet::new(x, vec![1, 0], 1, 2).unwrap();
        let m = Knn::fit(&t, &KnnParams { k: 1 }).unwrap();
        let mut out = [0.0; 2];
        m.proba_into(&[0.0], &mut out);
        assert_eq!(out, [0.0, 1.0]);
    }

    #[test]
    fn walk_matches_pointwise_predictions() {
        let t = train();
        let m = Knn::fit(&t, &KnnParams { k: 3 }).unwrap();
        let steps = [(0, 4.0), (1, 4.5), (0, 0.2), (1, 0.1)];
        let mut walked = [0.0; 8];
        m.walk_into(&[1.0, 1.0], &steps, &mut walked);
        let mut z = [1.0, 1.0];
        for (i, &(j, v)) in steps.iter().enumerate() {
            z[j] = v;
            let mut out = [0.0; 2];
            m.proba_into(&z, &mut out);
            assert_eq!(&walked[2 * i..2 * i + 2], &out, "step {i}");
        }
    }

    #[test]
    fn walk_matches_pointwise_predictions_across_skip_blocks() {
        let d = 3;
        let x: Vec<f64> = (0..300).map(|i| ((i * 7919) % 211) as f64 / 21.1).collect();
        let y: Vec<usize> = (0..100).map(|i| (i * 31) % 4).collect();
        let t = TrainingSet::new(x, y, d, 4).unwrap();
        let m = Knn::fit(&t, &KnnParams { k: 5 }).unwrap();
        let steps = [(1, 2.5), (0, 7.0), (2, 0.5), (1, 9.0), (0, 1.0)];
        let mut walked = [0.0; 20];
        m.walk_into(&[5.0, 5.0, 5.0], &steps, &mut walked);
        let mut z = [5.0, 5.0, 5.0];
        for (i, &(j, v)) in steps.iter().enumerate() {
            z[j] = v;
            let mut out = [0.0; 4];
            m.proba_into(&z, &mut out);
            assert_eq!(&walked[4 * i..4 * i + 4], &out, "step {i}");
        }
    }

    #[test]
    fn invalid_k() {
        let t = train();
        assert!(Knn::fit(&t, &KnnParams { k: 0 }).is_err());
        assert!(Knn::fit(&t, &KnnParams { k: 8 }).is_err());
    }
}
