use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingSet;
use crate::error::{Error, Result};
use crate::scalar::softmax_in_place;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: usize,
    /// L2 penalty, scaled by 1/(2n) like the usual full-batch formulation.
    pub alpha: f64,
    pub max_iter: usize,
    /// Training stops once the loss improves by less than this.
    pub tol: f64,
    /// L-BFGS history length.
    pub memory: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: 16,
            alpha: 1e-4,
            max_iter: 2000,
            tol: 1e-6,
            memory: 10,
        }
    }
}

/// One-hidden-layer tanh network with softmax output, trained full-batch
/// with L-BFGS on mean cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Mlp<F: Scalar> {
    n_features: usize,
    hidden: usize,
    n_classes: usize,
    /// w1 (hidden x d), b1 (hidden), w2 (classes x hidden), b2 (classes)
    params: Vec<F>,
    iterations: usize,
    final_loss: F,
}

struct Layout {
    d: usize,
    h: usize,
    c: usize,
}

impl Layout {
    fn len(&self) -> usize {
        self.h * self.d + self.h + self.c * self.h + self.c
    }

    fn split<'a, F>(&self, p: &'a [F]) -> (&'a [F], &'a [F], &'a [F], &'a [F]) {
        let (w1, rest) = p.split_at(self.h * self.d);
        let (b1, rest) = rest.split_at(self.h);
        let (w2, b2) = rest.split_at(self.c * self.h);
        (w1, b1, w2, b2)
    }

    fn split_mut<'a, F>(&self, p: &'a mut [F]) -> (&'a mut [F], &'a mut [F], &'a mut [F], &'a mut [F]) {
        let (w1, rest) = p.split_at_mut(self.h * self.d);
        let (b1, rest) = rest.split_at_mut(self.h);
        let (w2, b2) = rest.split_at_mut(self.c * self.h);
        (w1, b1, w2, b2)
    }

    fn forward<F: Scalar>(&self, p: &[F], x: &[F], hidden: &mut [F], out: &mut [F]) {
        let (w1, b1, w2, b2) = self.split(p);
        for (k, h) in hidden.iter_mut().enumerate() {
            let row = &w1[k * self.d..(k + 1) * self.d];
            let a = row.iter().zip(x).fold(b1[k], |acc, (w, v)| acc + *w * *v);
            *h = a.tanh();
        }
        for (c, o) in out.iter_mut().enumerate() {
            let row = &w2[c * self.h..(c + 1) * self.h];
            *o = row.iter().zip(hidden.iter()).fold(b2[c], |acc, (w, v)| acc + *w * *v);
        }
        softmax_in_place(out);
    }
}

fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (x, y)| acc + *x * *y)
}

impl<F: Scalar> Mlp<F> {
    fn layout(&self) -> Layout {
        Layout {
            d: self.n_features,
            h: self.hidden,
            c: self.n_classes,
        }
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn final_loss(&self) -> F {
        self.final_loss
    }

    pub fn fit(train: &TrainingSet<F>, params: &MlpParams, seed: u64) -> Result<Self> {
        if params.hidden == 0 || params.max_iter == 0 || params.memory == 0 || !(params.alpha >= 0.0) {
            return Err(Error::InvalidHyperparameters(format!("{params:?}")));
        }
        let layout = Layout {
            d: train.n_features,
            h: params.hidden,
            c: train.n_classes,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = vec![F::zero(); layout.len()];
        {
            let (w1, _, w2, _) = layout.split_mut(&mut theta);
            let l1 = (6.0 / (layout.d + layout.h) as f64).sqrt();
            for w in w1.iter_mut() {
                *w = F::of(rng.gen_range(-l1..l1));
            }
            let l2 = (6.0 / (layout.h + layout.c) as f64).sqrt();
            for w in w2.iter_mut() {
                *w = F::of(rng.gen_range(-l2..l2));
            }
        }
        let objective = |p: &[F], grad: &mut [F]| loss_and_grad(&layout, train, F::of(params.alpha), p, grad);
        let (theta, loss, iterations) = lbfgs(objective, theta, params);
        Ok(Self {
            n_features: layout.d,
            hidden: layout.h,
            n_classes: layout.c,
            params: theta,
            iterations,
            final_loss: loss,
        })
    }

    pub(crate) fn proba_into(&self, x: &[F], out: &mut [F]) {
        let mut hidden = vec![F::zero(); self.hidden];
        self.layout().forward(&self.params, x, &mut hidden, out);
    }
}

fn loss_and_grad<F: Scalar>(layout: &Layout, train: &TrainingSet<F>, alpha: F, p: &[F], grad: &mut [F]) -> F {
    grad.fill(F::zero());
    let n = train.len();
    let mut hidden = vec![F::zero(); layout.h];
    let mut out = vec![F::zero(); layout.c];
    let mut dh = vec![F::zero(); layout.h];
    let mut loss = F::zero();
    let tiny = F::min_positive_value();
    let (_, _, w2, _) = layout.split(p);
    let w2 = w2.to_vec();
    for i in 0..n {
        let x = train.row(i);
        layout.forward(p, x, &mut hidden, &mut out);
        let y = train.y[i];
        loss -= out[y].max(tiny).ln();
        out[y] -= F::one();
        let (g1, gb1, g2, gb2) = layout.split_mut(grad);
        dh.fill(F::zero());
        for c in 0..layout.c {
            let dz = out[c];
            gb2[c] += dz;
            for k in 0..layout.h {
                g2[c * layout.h + k] += dz * hidden[k];
                dh[k] += dz * w2[c * layout.h + k];
            }
        }
        for k in 0..layout.h {
            let da = dh[k] * (F::one() - hidden[k] * hidden[k]);
            gb1[k] += da;
            let row = &mut g1[k * layout.d..(k + 1) * layout.d];
            for (g, v) in row.iter_mut().zip(x) {
                *g += da * *v;
            }
        }
    }
    let nf = F::of_usize(n);
    let (w1, _, w2, _) = layout.split(p);
    let penalty = (dot(w1, w1) + dot(w2, w2)) * alpha / (F::of(2.0) * nf);
    for g in grad.iter_mut() {
        *g /= nf;
    }
    let (g1, _, g2, _) = layout.split_mut(grad);
    for (g, w) in g1.iter_mut().zip(w1) {
        *g += alpha * *w / nf;
    }
    for (g, w) in g2.iter_mut().zip(w2) {
        *g += alpha * *w / nf;
    }
    loss / nf + penalty
}

/// Limited-memory BFGS with Armijo backtracking. Returns the final point,
/// its objective value and the number of iterations taken.
fn lbfgs<F: Scalar>(
    mut objective: impl FnMut(&[F], &mut [F]) -> F,
    mut x: Vec<F>,
    params: &MlpParams,
) -> (Vec<F>, F, usize) {
    let m = x.len();
    let mut g = vec![F::zero(); m];
    let mut f = objective(&x, &mut g);
    let mut history: VecDeque<(Vec<F>, Vec<F>, F)> = VecDeque::with_capacity(params.memory);
    let mut x_new = vec![F::zero(); m];
    let mut g_new = vec![F::zero(); m];
    let c1 = F::of(1e-4);
    let tol = F::of(params.tol);
    let mut iterations = 0;

    while iterations < params.max_iter {
        iterations += 1;
        // two-loop recursion
        let mut dir: Vec<F> = g.iter().map(|v| -*v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = *rho * dot(s, &dir);
            for (d, yv) in dir.iter_mut().zip(y) {
                *d -= a * *yv;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            for d in dir.iter_mut() {
                *d *= gamma;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = *rho * dot(y, &dir);
            for (d, sv) in dir.iter_mut().zip(s) {
                *d += (*a - b) * *sv;
            }
        }
        let mut slope = dot(&g, &dir);
        if !(slope < F::zero()) {
            history.clear();
            for (d, gv) in dir.iter_mut().zip(&g) {
                *d = -*gv;
            }
            slope = -dot(&g, &g);
            if slope == F::zero() {
                break;
            }
        }

        let mut step = if history.is_empty() {
            F::one().min(F::one() / dot(&g, &g).sqrt())
        } else {
            F::one()
        };
        let mut accepted = None;
        for _ in 0..40 {
            for ((xn, xv), d) in x_new.iter_mut().zip(&x).zip(&dir) {
                *xn = *xv + step * *d;
            }
            let f_new = objective(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= f + c1 * step * slope {
                accepted = Some(f_new);
                break;
            }
            step *= F::of(0.5);
        }
        let Some(f_new) = accepted else { break };

        let s: Vec<F> = x_new.iter().zip(&x).map(|(a, b)| *a - *b).collect();
        let y: Vec<F> = g_new.iter().zip(&g).map(|(a, b)| *a - *b).collect();
        let sy = dot(&s, &y);
        if sy > F::of(1e-10) {
            if history.len() == params.memory {
                history.pop_front();
            }
            history.push_back((s, y, F::one() / sy));
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        let improvement = f - f_new;
        f = f_new;
        if improvement < tol {
            break;
        }
    }
    (x, f, iterations)
}
