use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingSet;
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features considered per split; `None` means floor(sqrt(d)).
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            min_samples_split: 2,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode<F: Scalar> {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: F,
        left: usize,
        right: usize,
    },
    Leaf { distribution: Vec<F> },
}

/// Binary decision tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Tree<F: Scalar> {
    nodes: Vec<TreeNode<F>>,
}

impl<F: Scalar> Tree<F> {
    pub fn from_nodes(nodes: Vec<TreeNode<F>>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidHyperparameters("empty tree".into()));
        }
        for node in &nodes {
            if let TreeNode::Split { left, right, .. } = node {
                if *left >= nodes.len() || *right >= nodes.len() {
                    return Err(Error::InvalidHyperparameters("dangling child index".into()));
                }
            }
        }
        Ok(Self { nodes })
    }

    pub fn leaf(&self, x: &[F]) -> &[F] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
                TreeNode::Leaf { distribution } => return distribution,
            }
        }
    }

    pub fn nodes(&self) -> &[TreeNode<F>] {
        &self.nodes
    }
}

/// Random forest of Gini trees. Class probabilities are the mean of the
/// per-tree leaf class distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Forest<F: Scalar> {
    trees: Vec<Tree<F>>,
    n_features: usize,
    n_classes: usize,
    #[serde(skip)]
    flat: FlatCache<F>,
}

#[derive(Debug, Clone, Default)]
struct FlatCache<F>(OnceLock<FlatForest<F>>);

impl<F> PartialEq for FlatCache<F> {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

const LEAF: u32 = u32::MAX;

/// All trees packed into one node array. A leaf stores the offset of its
/// class distribution in `left`.
#[derive(Debug, Clone)]
struct FlatForest<F> {
    nodes: Vec<FlatNode<F>>,
    roots: Vec<u32>,
    distributions: Vec<F>,
}

#[derive(Debug, Clone, Copy)]
struct FlatNode<F> {
    feature: u32,
    left: u32,
    right: u32,
    threshold: F,
}

impl<F: Scalar> FlatForest<F> {
    fn new(trees: &[Tree<F>]) -> Self {
        let mut flat = Self {
            nodes: Vec::new(),
            roots: Vec::new(),
            distributions: Vec::new(),
        };
        for tree in trees {
            let base = flat.nodes.len() as u32;
            flat.roots.push(base);
            for node in &tree.nodes {
                let node = match node {
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => FlatNode {
                        feature: *feature as u32,
                        left: base + *left as u32,
                        right: base + *right as u32,
                        threshold: *threshold,
                    },
                    TreeNode::Leaf { distribution } => {
                        let offset = flat.distributions.len() as u32;
                        flat.distributions.extend_from_slice(distribution);
                        FlatNode {
                            feature: LEAF,
                            left: offset,
                            right: 0,
                            threshold: F::zero(),
                        }
                    }
                };
                flat.nodes.push(node);
            }
        }
        flat
    }

    fn leaf(&self, root: u32, x: &[F]) -> usize {
        let mut at = root as usize;
        loop {
            let node = &self.nodes[at];
            if node.feature == LEAF {
                return node.left as usize;
            }
            at = if x[node.feature as usize] <= node.threshold {
                node.left
            } else {
                node.right
            } as usize;
        }
    }

    /// Distribution offset of the leaf reached from `root`, and the set of
    /// features tested on the way as a bitmask.
    fn route(&self, root: u32, x: &[F]) -> (usize, u64) {
        let mut at = root as usize;
        let mut mask = 0u64;
        loop {
            let node = &self.nodes[at];
            if node.feature == LEAF {
                return (node.left as usize, mask);
            }
            mask |= 1 << node.feature;
            at = if x[node.feature as usize] <= node.threshold {
                node.left
            } else {
                node.right
            } as usize;
        }
    }
}

impl<F: Scalar> Forest<F> {
    pub fn from_trees(trees: Vec<Tree<F>>, n_features: usize, n_classes: usize) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::InvalidHyperparameters("forest without trees".into()));
        }
        Ok(Self {
            trees,
            n_features,
            n_classes,
            flat: FlatCache::default(),
        })
    }

    pub fn trees(&self) -> &[Tree<F>] {
        &self.trees
    }

    /// Every tree draws from its own ChaCha stream of `seed`, so a tree's
    /// shape does not depend on how many trees precede it.
    pub fn fit(train: &TrainingSet<F>, params: &ForestParams, seed: u64) -> Result<Self> {
        if params.n_trees == 0 || params.max_depth == 0 || params.min_samples_split < 2 {
            return Err(Error::InvalidHyperparameters(format!("{params:?}")));
        }
        let d = train.n_features;
        let max_features = params
            .max_features
            .unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1));
        if max_features == 0 || max_features > d {
            return Err(Error::InvalidHyperparameters(format!(
                "max_features = {max_features} with {d} features"
            )));
        }
        let n = train.len();
        let trees = (0..params.n_trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                let rows: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.gen_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                let mut builder = TreeBuilder {
                    train,
                    params,
                    max_features,
                    rng,
                    nodes: Vec::new(),
                };
                builder.grow(rows, 0);
                Tree {
                    nodes: builder.nodes,
                }
            })
            .collect();
        Ok(Self {
            trees,
            n_features: d,
            n_classes: train.n_classes,
            flat: FlatCache::default(),
        })
    }

    pub(crate) fn proba_into(&self, x: &[F], out: &mut [F]) {
        let c = self.n_classes;
        let flat = self.flat.0.get_or_init(|| FlatForest::new(&self.trees));
        out.fill(F::zero());
        for &root in &flat.roots {
            let leaf = flat.leaf(root, x);
            for (o, p) in out.iter_mut().zip(&flat.distributions[leaf..leaf + c]) {
                *o += *p;
            }
        }
        let n = F::of_usize(self.trees.len());
        for o in out.iter_mut() {
            *o /= n;
        }
    }

    /// Only trees whose current path tests the changed feature are
    /// re-routed; the others keep their leaf.
    pub(crate) fn walk_into(&self, start: &[F], steps: &[(usize, F)], out: &mut [F]) {
        let c = self.n_classes;
        if self.n_features > 64 {
            let mut z = start.to_vec();
            for (s, &(j, v)) in steps.iter().enumerate() {
                z[j] = v;
                self.proba_into(&z, &mut out[s * c..(s + 1) * c]);
            }
            return;
        }
        let flat = self.flat.0.get_or_init(|| FlatForest::new(&self.trees));
        let mut z = start.to_vec();
        let mut state: Vec<(usize, u64)> = flat.roots.iter().map(|&r| flat.route(r, &z)).collect();
        let n = F::of_usize(self.trees.len());
        for (s, &(j, v)) in steps.iter().enumerate() {
            z[j] = v;
            let bit = 1u64 << j;
            let o = &mut out[s * c..(s + 1) * c];
            o.fill(F::zero());
            for (st, &root) in state.iter_mut().zip(&flat.roots) {
                if st.1 & bit != 0 {
                    *st = flat.route(root, &z);
                }
                for (a, p) in o.iter_mut().zip(&flat.distributions[st.0..st.0 + c]) {
                    *a += *p;
                }
            }
            for a in o.iter_mut() {
                *a /= n;
            }
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }
}

struct TreeBuilder<'a, F: Scalar> {
    train: &'a TrainingSet<F>,
    params: &'a ForestParams,
    max_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode<F>>,
}

struct BestSplit<F> {
    feature: usize,
    threshold: F,
    impurity: f64,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

impl<F: Scalar> TreeBuilder<'_, F> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.train.n_classes];
        for &r in rows {
            counts[self.train.y[r]] += 1;
        }
        counts
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&rows);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let id = self.nodes.len();
        if pure || depth >= self.params.max_depth || rows.len() < self.params.min_samples_split {
            self.nodes.push(self.leaf(&counts, rows.len()));
            return id;
        }
        let Some(best) = self.best_split(&rows) else {
            self.nodes.push(self.leaf(&counts, rows.len()));
            return id;
        };
        // placeholder, patched once both children exist
        self.nodes.push(TreeNode::Leaf {
            distribution: Vec::new(),
        });
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.train.row(r)[best.feature] <= best.threshold);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    fn leaf(&self, counts: &[usize], total: usize) -> TreeNode<F> {
        let t = F::of_usize(total);
        TreeNode::Leaf {
            distribution: counts.iter().map(|&c| F::of_usize(c) / t).collect(),
        }
    }

    /// Scans features in a random order, stopping after `max_features`
    /// non-constant ones have been evaluated.
    fn best_split(&mut self, rows: &[usize]) -> Option<BestSplit<F>> {
        let d = self.train.n_features;
        let mut order: Vec<usize> = (0..d).collect();
        let mut best: Option<BestSplit<F>> = None;
        let mut evaluated = 0;
        for i in 0..d {
            if evaluated == self.max_features {
                break;
            }
            let j = self.rng.gen_range(i..d);
            order.swap(i, j);
            let feature = order[i];
            if let Some(candidate) = self.scan_feature(rows, feature) {
                evaluated += 1;
                if best.as_ref().is_none_or(|b| candidate.impurity < b.impurity) {
                    best = Some(candidate);
                }
            }
        }
        best
    }

    fn scan_feature(&self, rows: &[usize], feature: usize) -> Option<BestSplit<F>> {
        let value = |r: usize| self.train.row(r)[feature];
        let mut sorted = rows.to_vec();
        sorted.sort_by(|&a, &b| {
            value(a)
                .partial_cmp(&value(b))
                .expect("finite features")
                .then(a.cmp(&b))
        });
        let n = sorted.len();
        let mut left = vec![0; self.train.n_classes];
        let mut right = self.counts(&sorted);
        let mut best: Option<BestSplit<F>> = None;
        for i in 0..n - 1 {
            let y = self.train.y[sorted[i]];
            left[y] += 1;
            right[y] -= 1;
            let (a, b) = (value(sorted[i]), value(sorted[i + 1]));
            if a >= b {
                continue;
            }
            let nl = i + 1;
            let nr = n - nl;
            let impurity = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
            if best.as_ref().is_none_or(|s| impurity < s.impurity) {
                let mut threshold = (a + b) / F::of(2.0);
                if threshold >= b {
                    threshold = a;
                }
                best = Some(BestSplit {
                    feature,
                    threshold,
                    impurity,
                });
            }
        }
        best
    }
}
