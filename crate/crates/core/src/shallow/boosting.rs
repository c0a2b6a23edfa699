//! Binary logistic gradient boosting with depth-capped regression trees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tree::{grow, sqrt_features, Columns, GrowParams, Node, Residuals, Tree};
use crate::seed::mix_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct Boosted {
    /// Prior log-odds.
    pub init: f64,
    pub shrinkage: f64,
    pub trees: Vec<Tree>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `y` holds 1.0 for the positive class and 0.0 otherwise. Each round fits
/// a tree to the residuals `y - p` with Newton leaf values; split search
/// looks at `sqrt(d)` random features per node.
pub(crate) fn fit(x: &Columns, y: &[f64], trees: usize, max_depth: usize, shrinkage: f64, seed: u64) -> Boosted {
    let n = x.rows();
    let p0 = (y.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let init = (p0 / (1.0 - p0)).ln();
    let mut score = vec![init; n];
    let params = GrowParams {
        max_depth,
        max_features: sqrt_features(x.cols()),
    };
    let mut out = Boosted {
        init,
        shrinkage,
        trees: Vec::with_capacity(trees),
    };
    for m in 0..trees {
        let p: Vec<f64> = score.iter().map(|&f| sigmoid(f)).collect();
        let residuals: Vec<f64> = y.iter().zip(&p).map(|(t, q)| t - q).collect();
        let hessians: Vec<f64> = p.iter().map(|q| q * (1.0 - q)).collect();
        let crit = Residuals {
            residuals: &residuals,
            hessians: &hessians,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, m as u64]));
        let tree = grow(x, (0..n).collect(), &crit, params, &mut rng);
        for (s, leaf) in score.iter_mut().zip(training_leaves(&tree, x)) {
            *s += shrinkage * leaf;
        }
        out.trees.push(tree);
    }
    out
}

impl Boosted {
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.init + self.shrinkage * self.trees.iter().map(|t| t.leaf_value(row)[0]).sum::<f64>()
    }
}

/// Leaf value reached by every training sample, routed column-wise.
fn training_leaves(tree: &Tree, x: &Columns) -> Vec<f64> {
    let mut out = vec![0.0; x.rows()];
    let mut stack = vec![(0usize, (0..x.rows()).collect::<Vec<usize>>())];
    while let Some((at, idx)) = stack.pop() {
        match &tree.nodes[at] {
            Node::Leaf { value } => idx.iter().for_each(|&i| out[i] = value[0]),
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x.value(*feature, i) <= *threshold);
                stack.push((*left, l));
                stack.push((*right, r));
            }
        }
    }
    out
}
