//! Histogram-binned decision trees shared by the forest and the booster.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::emotion_features::FeatureMatrix;

pub const MAX_BINS: usize = 256;

/// Column-major bin codes plus the real-valued split thresholds between bins.
///
/// Bin `b` of feature `j` holds values `x` with `thresholds[j][b-1] < x <= thresholds[j][b]`,
/// so a split "bins `0..=b` go left" is the rule `x <= thresholds[j][b]`.
pub struct BinnedMatrix {
    n_rows: usize,
    codes: Vec<u8>,
    thresholds: Vec<Vec<f64>>,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

impl BinnedMatrix {
    pub fn new(x: &FeatureMatrix) -> Self {
        let n = x.n_rows();
        let d = x.n_cols();
        let mut codes = vec![0u8; n * d];
        let mut thresholds = Vec::with_capacity(d);
        for j in 0..d {
            let mut vals: Vec<f64> = (0..n).map(|i| x.get(i, j)).collect();
            vals.sort_by(f64::total_cmp);
            let mut uniq = vals.clone();
            uniq.dedup();
            let thr: Vec<f64> = if uniq.len() <= MAX_BINS {
                uniq.windows(2).map(|w| midpoint(w[0], w[1])).collect()
            } else {
                let mut cuts: Vec<f64> = (1..MAX_BINS)
                    .map(|q| vals[q * (n - 1) / MAX_BINS])
                    .collect();
                cuts.dedup();
                // the largest value must stay on the right of every cut
                cuts.retain(|c| *c < uniq[uniq.len() - 1]);
                cuts
            };
            for i in 0..n {
                let v = x.get(i, j);
                codes[j * n + i] = thr.partition_point(|t| *t < v) as u8;
            }
            thresholds.push(thr);
        }
        BinnedMatrix {
            n_rows: n,
            codes,
            thresholds,
        }
    }

    pub fn n_cols(&self) -> usize {
        self.thresholds.len()
    }

    pub fn n_bins(&self, j: usize) -> usize {
        self.thresholds[j].len() + 1
    }

    #[inline]
    pub fn code(&self, i: usize, j: usize) -> usize {
        self.codes[j * self.n_rows + i] as usize
    }

    pub fn threshold(&self, j: usize, bin: usize) -> f64 {
        self.thresholds[j][bin]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node<V> {
    Leaf(V),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree<V> {
    pub nodes: Vec<Node<V>>,
}

impl<V> Tree<V> {
    pub fn leaf(&self, x: &[f64]) -> &V {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go<V>(t: &Tree<V>, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }
}

struct BestSplit {
    feature: usize,
    bin: usize,
    score: f64,
}

fn partition(binned: &BinnedMatrix, rows: &[usize], feature: usize, bin: usize) -> (Vec<usize>, Vec<usize>) {
    rows.iter().partition(|&&i| binned.code(i, feature) <= bin)
}

/// Second-order regression tree on per-row gradients and hessians.
pub struct GradientTreeParams {
    pub max_depth: usize,
    pub lambda: f64,
    pub min_samples_leaf: usize,
}

pub fn grow_gradient_tree(
    binned: &BinnedMatrix,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    features: &[usize],
    params: &GradientTreeParams,
) -> Tree<f64> {
    let mut tree = Tree { nodes: Vec::new() };
    grow_gradient_node(&mut tree, binned, rows.to_vec(), grad, hess, features, params, 0);
    tree
}

#[allow(clippy::too_many_arguments)]
fn grow_gradient_node(
    tree: &mut Tree<f64>,
    binned: &BinnedMatrix,
    rows: Vec<usize>,
    grad: &[f64],
    hess: &[f64],
    features: &[usize],
    p: &GradientTreeParams,
    depth: usize,
) -> usize {
    let id = tree.nodes.len();
    let g: f64 = rows.iter().map(|&i| grad[i]).sum();
    let h: f64 = rows.iter().map(|&i| hess[i]).sum();
    tree.nodes.push(Node::Leaf(-g / (h + p.lambda)));
    if depth >= p.max_depth || rows.len() < 2 * p.min_samples_leaf.max(1) {
        return id;
    }
    let parent = g * g / (h + p.lambda);
    let mut best: Option<BestSplit> = None;
    let mut hist: Vec<(f64, f64, usize)> = Vec::new();
    for &f in features {
        let nb = binned.n_bins(f);
        if nb < 2 {
            continue;
        }
        hist.clear();
        hist.resize(nb, (0.0, 0.0, 0));
        for &i in &rows {
            let e = &mut hist[binned.code(i, f)];
            e.0 += grad[i];
            e.1 += hess[i];
            e.2 += 1;
        }
        let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
        for (b, e) in hist.iter().enumerate().take(nb - 1) {
            gl += e.0;
            hl += e.1;
            nl += e.2;
            let nr = rows.len() - nl;
            if nl < p.min_samples_leaf.max(1) {
                continue;
            }
            if nr < p.min_samples_leaf.max(1) {
                break;
            }
            let gr = g - gl;
            let hr = h - hl;
            let gain = gl * gl / (hl + p.lambda) + gr * gr / (hr + p.lambda) - parent;
            if gain > 1e-14 && best.as_ref().is_none_or(|bs| gain > bs.score) {
                best = Some(BestSplit {
                    feature: f,
                    bin: b,
                    score: gain,
                });
            }
        }
    }
    let Some(bs) = best else { return id };
    let (lrows, rrows) = partition(binned, &rows, bs.feature, bs.bin);
    drop(rows);
    let left = grow_gradient_node(tree, binned, lrows, grad, hess, features, p, depth + 1);
    let right = grow_gradient_node(tree, binned, rrows, grad, hess, features, p, depth + 1);
    tree.nodes[id] = Node::Split {
        feature: bs.feature,
        threshold: binned.threshold(bs.feature, bs.bin),
        left,
        right,
    };
    id
}

/// Gini classification tree with per-row sample weights. Leaves hold
/// weighted class frequencies over `n_classes`.
pub struct GiniTreeParams {
    pub n_classes: usize,
    pub max_depth: usize,
    pub max_features: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

pub fn grow_gini_tree<R: Rng>(
    binned: &BinnedMatrix,
    rows: &[usize],
    class: &[usize],
    weight: &[f64],
    params: &GiniTreeParams,
    rng: &mut R,
) -> Tree<Vec<f64>> {
    let mut tree = Tree { nodes: Vec::new() };
    grow_gini_node(&mut tree, binned, rows.to_vec(), class, weight, params, rng, 0);
    tree
}

fn weighted_gini_mass(counts: &[f64]) -> f64 {
    // W * gini = W - sum(W_k^2) / W
    let w: f64 = counts.iter().sum();
    if w <= 0.0 {
        return 0.0;
    }
    w - counts.iter().map(|c| c * c).sum::<f64>() / w
}

#[allow(clippy::too_many_arguments)]
fn grow_gini_node<R: Rng>(
    tree: &mut Tree<Vec<f64>>,
    binned: &BinnedMatrix,
    rows: Vec<usize>,
    class: &[usize],
    weight: &[f64],
    p: &GiniTreeParams,
    rng: &mut R,
    depth: usize,
) -> usize {
    let k = p.n_classes;
    let mut counts = vec![0.0; k];
    for &i in &rows {
        counts[class[i]] += weight[i];
    }
    let total: f64 = counts.iter().sum();
    let probs: Vec<f64> = if total > 0.0 {
        counts.iter().map(|c| c / total).collect()
    } else {
        vec![1.0 / k as f64; k]
    };
    let id = tree.nodes.len();
    tree.nodes.push(Node::Leaf(probs));
    let pure = counts.iter().filter(|c| **c > 0.0).count() <= 1;
    if depth >= p.max_depth || rows.len() < p.min_samples_split.max(2) || pure {
        return id;
    }

    let parent = weighted_gini_mass(&counts);
    let d = binned.n_cols();
    let m = p.max_features.clamp(1, d);
    let candidates = sample(rng, d, m).into_vec();
    let mut best: Option<BestSplit> = None;
    let min_leaf = p.min_samples_leaf.max(1);
    for f in candidates {
        let nb = binned.n_bins(f);
        if nb < 2 {
            continue;
        }
        let mut hist = vec![0.0; nb * k];
        let mut hcount = vec![0usize; nb];
        for &i in &rows {
            let b = binned.code(i, f);
            hist[b * k + class[i]] += weight[i];
            hcount[b] += 1;
        }
        let mut left = vec![0.0; k];
        let mut right = counts.clone();
        let mut nl = 0usize;
        for b in 0..nb - 1 {
            for c in 0..k {
                left[c] += hist[b * k + c];
                right[c] -= hist[b * k + c];
            }
            nl += hcount[b];
            let nr = rows.len() - nl;
            if nl < min_leaf {
                continue;
            }
            if nr < min_leaf {
                break;
            }
            if hcount[b] == 0 {
                continue;
            }
            let score = weighted_gini_mass(&left) + weighted_gini_mass(&right);
            if score < parent - 1e-12 && best.as_ref().is_none_or(|bs| score < bs.score) {
                best = Some(BestSplit {
                    feature: f,
                    bin: b,
                    score,
                });
            }
        }
    }
    let Some(bs) = best else { return id };
    let (lrows, rrows) = partition(binned, &rows, bs.feature, bs.bin);
    drop(rows);
    let left = grow_gini_node(tree, binned, lrows, class, weight, p, rng, depth + 1);
    let right = grow_gini_node(tree, binned, rrows, class, weight, p, rng, depth + 1);
    tree.nodes[id] = Node::Split {
        feature: bs.feature,
        threshold: binned.threshold(bs.feature, bs.bin),
        left,
        right,
    };
    id
}
