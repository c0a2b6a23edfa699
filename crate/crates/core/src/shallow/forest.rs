//! Random forest classifier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tree::{grow, sqrt_features, Columns, Gini, GrowParams, Tree};
use crate::seed::mix_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    /// Bootstrap sample of every tree.
    pub samples: Vec<Vec<usize>>,
    pub classes: usize,
}

/// Tree `t` draws its bootstrap and feature subsets from its own stream, so a
/// forest of `m` trees is a prefix of any larger forest with the same seed.
pub(crate) fn fit(x: &Columns, y: &[usize], classes: usize, trees: usize, max_depth: usize, seed: u64) -> Forest {
    let n = x.rows();
    let params = GrowParams {
        max_depth,
        max_features: sqrt_features(x.cols()),
    };
    let crit = Gini { labels: y, classes };
    let mut out = Forest {
        trees: Vec::with_capacity(trees),
        samples: Vec::with_capacity(trees),
        classes,
    };
    for t in 0..trees {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, t as u64]));
        let boot: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        out.trees.push(grow(x, boot.clone(), &crit, params, &mut rng));
        out.samples.push(boot);
    }
    out
}

impl Forest {
    /// Mean of the trees' leaf class frequencies.
    pub fn proba(&self, row: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.classes];
        for t in &self.trees {
            for (a, v) in p.iter_mut().zip(t.leaf_value(row)) {
                *a += v;
            }
        }
        p.iter_mut().for_each(|v| *v /= self.trees.len() as f64);
        p
    }
}
