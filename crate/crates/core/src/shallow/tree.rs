//! CART trees shared by the random forest and gradient boosting.
//!
//! Splits send `x[feature] <= threshold` left; thresholds are midpoints
//! between consecutive distinct values. At each node a random subset of
//! features is searched exhaustively and the first best split (feature order,
//! then threshold order) wins.

use rand::seq::index::sample;
use rand::Rng;

use crate::tensor::Matrix;

/// Per-feature sorted view of a training matrix. Split search streams each
/// feature's values in sorted order, so scans stay sequential in memory.
#[derive(Clone, Debug)]
pub(crate) struct Columns {
    n: usize,
    d: usize,
    /// Samples of every feature in (value, index) order.
    sorted: Vec<u32>,
    /// Values in the same order.
    values: Vec<f64>,
    /// Position of every sample in its feature's sorted order.
    position: Vec<u32>,
}

impl Columns {
    pub fn new(x: &Matrix) -> Self {
        let (n, d) = (x.rows(), x.cols());
        let mut sorted = vec![0u32; n * d];
        let mut values = vec![0.0; n * d];
        let mut position = vec![0u32; n * d];
        let mut col = vec![0.0; n];
        let mut order: Vec<usize> = Vec::with_capacity(n);
        for f in 0..d {
            col.iter_mut().zip(x.iter_rows()).for_each(|(c, row)| *c = row[f]);
            order.clear();
            order.extend(0..n);
            order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            for (p, &i) in order.iter().enumerate() {
                sorted[f * n + p] = i as u32;
                values[f * n + p] = col[i];
                position[f * n + i] = p as u32;
            }
        }
        Columns {
            n,
            d,
            sorted,
            values,
            position,
        }
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn value(&self, f: usize, sample: usize) -> f64 {
        self.values[f * self.n + self.position[f * self.n + sample] as usize]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Leaf {
        value: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Nodes in creation order; the root is node 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, row: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
            }
        }
        walk(self, 0)
    }
}

/// Split criterion over additive per-sample statistics.
pub(crate) trait Criterion {
    fn dim(&self) -> usize;
    fn add(&self, stats: &mut [f64], sample: usize);
    /// Impurity summed over the samples behind `stats`.
    fn impurity(&self, stats: &[f64]) -> f64;
    /// Impurity decrease of splitting `total` into `left` and the rest.
    fn gain(&self, parent: f64, left: &[f64], total: &[f64]) -> f64;
    fn leaf(&self, samples: &[usize]) -> Vec<f64>;
}

/// Gini impurity; leaves hold class frequencies.
pub(crate) struct Gini<'a> {
    pub labels: &'a [usize],
    pub classes: usize,
}

impl Criterion for Gini<'_> {
    fn dim(&self) -> usize {
        self.classes
    }

    fn add(&self, stats: &mut [f64], sample: usize) {
        stats[self.labels[sample]] += 1.0;
    }

    fn impurity(&self, stats: &[f64]) -> f64 {
        let n: f64 = stats.iter().sum();
        if n == 0.0 {
            0.0
        } else {
            n - stats.iter().map(|c| c * c).sum::<f64>() / n
        }
    }

    fn gain(&self, parent: f64, left: &[f64], total: &[f64]) -> f64 {
        let (mut nl, mut nr, mut ql, mut qr) = (0.0, 0.0, 0.0, 0.0);
        for (&l, &t) in left.iter().zip(total) {
            let r = t - l;
            nl += l;
            nr += r;
            ql += l * l;
            qr += r * r;
        }
        let side = |n: f64, q: f64| if n == 0.0 { 0.0 } else { n - q / n };
        parent - side(nl, ql) - side(nr, qr)
    }

    fn leaf(&self, samples: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; self.classes];
        for &s in samples {
            v[self.labels[s]] += 1.0;
        }
        v.iter_mut().for_each(|c| *c /= samples.len() as f64);
        v
    }
}

/// Squared error on residuals, with Newton leaf values
/// `sum r / sum h` for logistic boosting.
pub(crate) struct Residuals<'a> {
    pub residuals: &'a [f64],
    pub hessians: &'a [f64],
}

impl Criterion for Residuals<'_> {
    fn dim(&self) -> usize {
        3
    }

    fn add(&self, stats: &mut [f64], sample: usize) {
        let r = self.residuals[sample];
        stats[0] += 1.0;
        stats[1] += r;
        stats[2] += r * r;
    }

    fn impurity(&self, stats: &[f64]) -> f64 {
        if stats[0] == 0.0 {
            0.0
        } else {
            (stats[2] - stats[1] * stats[1] / stats[0]).max(0.0)
        }
    }

    /// Between-group sum of squares, which equals the SSE decrease.
    fn gain(&self, _parent: f64, left: &[f64], total: &[f64]) -> f64 {
        let (nl, sl) = (left[0], left[1]);
        let (nr, sr) = (total[0] - nl, total[1] - sl);
        sl * sl / nl + sr * sr / nr - total[1] * total[1] / total[0]
    }

    fn leaf(&self, samples: &[usize]) -> Vec<f64> {
        let r: f64 = samples.iter().map(|&s| self.residuals[s]).sum();
        let h: f64 = samples.iter().map(|&s| self.hessians[s]).sum();
        vec![if h < 1e-12 { 0.0 } else { r / h }]
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    /// Features searched per split.
    pub max_features: usize,
}

/// `floor(sqrt(d))`, at least 1.
pub(crate) fn sqrt_features(d: usize) -> usize {
    ((d as f64).sqrt().floor() as usize).max(1)
}

pub(crate) struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub decrease: f64,
}

/// Exhaustive search over the midpoints of `features` for the samples in `idx`.
pub(crate) fn best_split<C: Criterion>(x: &Columns, idx: &[usize], features: &[usize], crit: &C) -> Option<SplitChoice> {
    let dim = crit.dim();
    let mut total = vec![0.0; dim];
    for &i in idx {
        crit.add(&mut total, i);
    }
    let parent = crit.impurity(&total);
    let mut best: Option<SplitChoice> = None;
    // Sorted positions of the node's samples; large nodes take them from a
    // pass over the whole sorted column instead of sorting.
    let mut positions: Vec<u32> = Vec::with_capacity(idx.len());
    let m = idx.len();
    let filter = m * (usize::BITS - m.leading_zeros()) as usize > 2 * x.n;
    let mut multiplicity = vec![0u32; if filter { x.n } else { 0 }];
    if filter {
        idx.iter().for_each(|&i| multiplicity[i] += 1);
    }
    let mut left = vec![0.0; dim];
    for &f in features {
        let base = f * x.n;
        let sorted = &x.sorted[base..base + x.n];
        let values = &x.values[base..base + x.n];
        positions.clear();
        if filter {
            for (p, &i) in sorted.iter().enumerate() {
                for _ in 0..multiplicity[i as usize] {
                    positions.push(p as u32);
                }
            }
        } else {
            let pos = &x.position[base..base + x.n];
            positions.extend(idx.iter().map(|&i| pos[i]));
            positions.sort_unstable();
        }
        left.iter_mut().for_each(|v| *v = 0.0);
        for w in positions.windows(2) {
            crit.add(&mut left, sorted[w[0] as usize] as usize);
            let (lo, hi) = (values[w[0] as usize], values[w[1] as usize]);
            if lo >= hi {
                continue;
            }
            let decrease = crit.gain(parent, &left, &total);
            if best.as_ref().is_none_or(|b| decrease > b.decrease) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(SplitChoice {
                    feature: f,
                    threshold,
                    decrease,
                });
            }
        }
    }
    best
}

/// Grows a tree on the (possibly repeated) sample indices `idx`.
pub(crate) fn grow<C: Criterion, R: Rng>(x: &Columns, idx: Vec<usize>, crit: &C, params: GrowParams, rng: &mut R) -> Tree {
    let mut tree = Tree { nodes: Vec::new() };
    build(&mut tree, x, idx, crit, params, 0, rng);
    tree
}

fn build<C: Criterion, R: Rng>(
    tree: &mut Tree,
    x: &Columns,
    idx: Vec<usize>,
    crit: &C,
    params: GrowParams,
    depth: usize,
    rng: &mut R,
) -> usize {
    let id = tree.nodes.len();
    let mut stats = vec![0.0; crit.dim()];
    for &i in &idx {
        crit.add(&mut stats, i);
    }
    let pure = crit.impurity(&stats) <= 1e-12;
    if depth >= params.max_depth || idx.len() < 2 || pure {
        tree.nodes.push(Node::Leaf { value: crit.leaf(&idx) });
        return id;
    }
    let d = x.cols();
    let mut features = sample(rng, d, params.max_features.min(d)).into_vec();
    features.sort_unstable();
    let Some(choice) = best_split(x, &idx, &features, crit) else {
        tree.nodes.push(Node::Leaf { value: crit.leaf(&idx) });
        return id;
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
        idx.iter().partition(|&&i| x.value(choice.feature, i) <= choice.threshold);
    tree.nodes.push(Node::Leaf { value: Vec::new() });
    let left = build(tree, x, left_idx, crit, params, depth + 1, rng);
    let right = build(tree, x, right_idx, crit, params, depth + 1, rng);
    tree.nodes[id] = Node::Split {
        feature: choice.feature,
        threshold: choice.threshold,
        left,
        right,
    };
    id
}
