//! Pairwise inner products and distances shared by the kernel learners.

use std::sync::Arc;

use crate::tensor::{dot, Matrix};

/// Row-major `n x n` matrix of `<x_i, x_j>`.
pub(crate) fn gram(x: &Matrix) -> Vec<f64> {
    let n = x.rows();
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = dot(x.row(i), x.row(j));
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    g
}

/// Squared Euclidean distances recovered from a Gram matrix.
pub(crate) fn sq_dists_from_gram(gram: &[f64], n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[i * n + j] = (gram[i * n + i] + gram[j * n + j] - 2.0 * gram[i * n + j]).max(0.0);
            }
        }
    }
    d
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            let d = x[i] - y[i];
            acc[i] += d * d;
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Lazily computed kernel quantities for one training matrix, reused across
/// grid points.
pub(crate) struct KernelCache {
    x: Arc<Matrix>,
    gram: std::cell::OnceCell<Vec<f64>>,
    dists: std::cell::OnceCell<Vec<f64>>,
}

impl KernelCache {
    pub fn new(x: Arc<Matrix>) -> Self {
        KernelCache {
            x,
            gram: Default::default(),
            dists: Default::default(),
        }
    }

    pub fn gram(&self) -> &[f64] {
        self.gram.get_or_init(|| gram(&self.x))
    }

    pub fn sq_dists(&self) -> &[f64] {
        self.dists
            .get_or_init(|| sq_dists_from_gram(self.gram(), self.x.rows()))
    }

    pub fn rbf(&self, gamma: f64) -> Vec<f64> {
        self.sq_dists().iter().map(|d| (-gamma * d).exp()).collect()
    }
}
