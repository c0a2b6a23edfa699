//! Binary soft-margin SVM solved in the dual by SMO.
//!
//! Working pairs are chosen by maximal KKT violation; the solver stops when
//! the violation drops below [`KKT_TOLERANCE`] or after [`MAX_PASSES`] passes
//! of `n` pair updates each.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::kernel::sq_dist;
use crate::tensor::{dot, Matrix};

pub const KKT_TOLERANCE: f64 = 1e-4;
pub const MAX_PASSES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

/// Result of the dual optimisation on a precomputed kernel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub passes: usize,
    pub converged: bool,
    /// Dual objective `sum a - 1/2 a'Qa` after every completed pass.
    pub objective_history: Vec<f64>,
}

/// `k` is the row-major `n x n` kernel matrix, `y` holds +1 / -1.
pub fn solve_dual(k: &[f64], y: &[f64], c: f64) -> DualSolution {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    // Gradient of f(a) = 1/2 a'Qa - sum a, with Q_ij = y_i y_j K_ij.
    let mut grad = vec![-1.0; n];
    let mut history = Vec::new();
    let dual = |alpha: &[f64], grad: &[f64]| -> f64 {
        -0.5 * alpha.iter().zip(grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>()
    };
    let mut converged = false;
    let mut updates = 0usize;
    let max_updates = MAX_PASSES * n.max(1);
    while updates < max_updates {
        let mut up = (f64::NEG_INFINITY, usize::MAX);
        let mut low = (f64::INFINITY, usize::MAX);
        for t in 0..n {
            let v = -y[t] * grad[t];
            let in_up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            let in_low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
            if in_up && v > up.0 {
                up = (v, t);
            }
            if in_low && v < low.0 {
                low = (v, t);
            }
        }
        if up.1 == usize::MAX || low.1 == usize::MAX || up.0 - low.0 < KKT_TOLERANCE {
            converged = true;
            break;
        }
        let (i, j) = (up.1, low.1);
        let curvature = (k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j]).max(1e-12);
        let mut lambda = (up.0 - low.0) / curvature;
        lambda = lambda.min(if y[i] > 0.0 { c - alpha[i] } else { alpha[i] });
        lambda = lambda.min(if y[j] > 0.0 { alpha[j] } else { c - alpha[j] });
        alpha[i] = (alpha[i] + y[i] * lambda).clamp(0.0, c);
        alpha[j] = (alpha[j] - y[j] * lambda).clamp(0.0, c);
        for t in 0..n {
            grad[t] += y[t] * lambda * (k[t * n + i] - k[t * n + j]);
        }
        updates += 1;
        if updates.is_multiple_of(n.max(1)) {
            history.push(dual(&alpha, &grad));
        }
    }
    if converged || history.is_empty() {
        history.push(dual(&alpha, &grad));
    }

    // Threshold: average over free vectors, else the midpoint of the bounds.
    let (mut sum, mut free) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if at_upper {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum += yg;
            free += 1;
        }
    }
    let rho = if free > 0 {
        sum / free as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else {
        0.0
    };
    DualSolution {
        alpha,
        rho,
        passes: updates.div_ceil(n.max(1)),
        converged,
        objective_history: history,
    }
}

/// A fitted binary SVM; decision `sum_i coef_i K(sv_i, x) - rho`.
#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub rho: f64,
    pub converged: bool,
    /// Indices of the support vectors in the training matrix.
    pub support: Vec<usize>,
    /// `alpha_i y_i` per support vector.
    pub coef: Vec<f64>,
    /// Primal weights, linear kernel only.
    weights: Option<Vec<f64>>,
    train: Arc<Matrix>,
}

impl SvmModel {
    pub(crate) fn from_dual(sol: DualSolution, y: &[f64], kernel: Kernel, train: Arc<Matrix>) -> Self {
        let mut support = Vec::new();
        let mut coef = Vec::new();
        for (i, (&a, &yi)) in sol.alpha.iter().zip(y).enumerate() {
            if a > 0.0 {
                support.push(i);
                coef.push(a * yi);
            }
        }
        let weights = matches!(kernel, Kernel::Linear).then(|| {
            let mut w = vec![0.0; train.cols()];
            for (&i, &cf) in support.iter().zip(&coef) {
                for (wv, xv) in w.iter_mut().zip(train.row(i)) {
                    *wv += cf * xv;
                }
            }
            w
        });
        SvmModel {
            kernel,
            rho: sol.rho,
            converged: sol.converged,
            support,
            coef,
            weights,
            train,
        }
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        match (&self.weights, self.kernel) {
            (Some(w), _) => dot(w, row) - self.rho,
            (None, Kernel::Rbf { gamma }) => self.rbf_decision(gamma, |i| sq_dist(self.train.row(i), row)),
            (None, Kernel::Linear) => unreachable!("linear models carry primal weights"),
        }
    }

    /// Decision from precomputed squared distances to every training row.
    pub(crate) fn decision_from_dists(&self, row: &[f64], dists: &[f64]) -> f64 {
        match self.kernel {
            Kernel::Rbf { gamma } => self.rbf_decision(gamma, |i| dists[i]),
            Kernel::Linear => self.decision(row),
        }
    }

    fn rbf_decision(&self, gamma: f64, dist: impl Fn(usize) -> f64) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(&i, &cf)| cf * (-gamma * dist(i)).exp())
            .sum::<f64>()
            - self.rho
    }

    pub(crate) fn train(&self) -> &Arc<Matrix> {
        &self.train
    }
}
