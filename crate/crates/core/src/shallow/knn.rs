//! k-nearest-neighbour classification.

use std::sync::Arc;

use super::kernel::sq_dist;
use crate::tensor::Matrix;

/// Lazy learner: keeps the training set verbatim.
#[derive(Clone, Debug, PartialEq)]
pub struct KNeighbors {
    pub k: usize,
    pub train: Arc<Matrix>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl KNeighbors {
    /// Indices of the `k` nearest training rows, ordered by (distance, index).
    pub fn neighbours(&self, row: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .train
            .iter_rows()
            .enumerate()
            .map(|(i, t)| (sq_dist(t, row), i))
            .collect();
        let k = self.k.min(d.len());
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(k);
        d.into_iter().map(|(_, i)| i).collect()
    }

    /// Neighbour count per class.
    pub fn votes(&self, row: &[f64]) -> Vec<f64> {
        let mut votes = vec![0.0; self.classes];
        for i in self.neighbours(row) {
            votes[self.labels[i]] += 1.0;
        }
        votes
    }

    /// Majority vote; tied counts go to the smallest class.
    pub fn predict_one(&self, row: &[f64]) -> usize {
        super::argmax(&self.votes(row))
    }
}
