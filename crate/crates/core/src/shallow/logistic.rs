//! Binary L2-regularised logistic regression.
//!
//! Minimises `sum_i log(1 + exp(-y_i (w.x_i + b))) + |w|^2 / (2C)` by
//! full-batch gradient descent with Armijo backtracking, intercept
//! unregularised. Starting from `w = 0`, every iterate stays in the span of
//! the training rows, so the descent runs on representer coefficients
//! (`w = sum_i a_i x_i`) against the Gram matrix; the iterates are exactly
//! those of primal descent, at `O(n^2)` per step instead of `O(n d)`.

use serde::{Deserialize, Serialize};

use crate::tensor::{dot, Matrix};

pub const MAX_ITERATIONS: usize = 5000;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn matvec(k: &[f64], v: &[f64]) -> Vec<f64> {
    k.chunks_exact(v.len()).map(|row| dot(row, v)).collect()
}

/// Gram matrix of the column-centred rows, derived from the raw one.
fn centred_gram(gram: &[f64], n: usize) -> Vec<f64> {
    let r: Vec<f64> = gram.chunks_exact(n).map(|row| row.iter().sum::<f64>() / n as f64).collect();
    let s = r.iter().sum::<f64>() / n as f64;
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] = gram[i * n + j] - r[i] - r[j] + s;
        }
    }
    k
}

/// `y` holds +1 / -1 targets; `gram` is the `n x n` Gram matrix of `x`.
///
/// Features are centred internally (an exact reparametrisation, since the
/// intercept is free), and each iteration takes a backtracking step on the
/// weights followed by one on the intercept, each with its own step size:
/// with small `C` the two blocks differ in curvature by orders of magnitude.
pub(crate) fn fit(x: &Matrix, gram: &[f64], y: &[f64], c: f64) -> LogisticModel {
    let n = y.len();
    let k = centred_gram(gram, n);
    let mut alpha = vec![0.0; n];
    let mut b = 0.0;
    // k_alpha = K a, so margins are k_alpha + b and |w|^2 = a.K a.
    let mut k_alpha = vec![0.0; n];
    let objective = |k_alpha: &[f64], alpha: &[f64], b: f64| -> f64 {
        let loss: f64 = k_alpha.iter().zip(y).map(|(ka, yi)| softplus(-yi * (ka + b))).sum();
        loss + dot(alpha, k_alpha) / (2.0 * c)
    };
    let intercept_grad = |k_alpha: &[f64], b: f64| -> f64 {
        k_alpha.iter().zip(y).map(|(ka, yi)| -yi * sigmoid(-yi * (ka + b))).sum()
    };
    let mut value = objective(&k_alpha, &alpha, b);
    let (mut step_w, mut step_b) = (1.0f64, 1.0f64);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        let g_alpha: Vec<f64> = (0..n)
            .map(|i| -y[i] * sigmoid(-y[i] * (k_alpha[i] + b)) + alpha[i] / c)
            .collect();
        let g_b = intercept_grad(&k_alpha, b);
        let k_g = matvec(&k, &g_alpha);
        let g_w_sq = dot(&g_alpha, &k_g).max(0.0);
        // The 2-norm bounds the infinity norm of the primal gradient.
        if g_w_sq.sqrt() < GRADIENT_TOLERANCE && g_b.abs() < GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        iterations += 1;
        let mut moved = false;

        if g_w_sq > 0.0 {
            step_w *= 2.0;
            while step_w > 1e-30 {
                let trial_alpha: Vec<f64> = alpha.iter().zip(&g_alpha).map(|(a, g)| a - step_w * g).collect();
                let trial_ka: Vec<f64> = k_alpha.iter().zip(&k_g).map(|(ka, kg)| ka - step_w * kg).collect();
                let trial = objective(&trial_ka, &trial_alpha, b);
                if trial <= value - 0.5 * step_w * g_w_sq {
                    moved |= trial < value;
                    alpha = trial_alpha;
                    k_alpha = trial_ka;
                    value = trial;
                    break;
                }
                step_w *= 0.5;
            }
        }

        let g_b = intercept_grad(&k_alpha, b);
        if g_b != 0.0 {
            step_b *= 2.0;
            while step_b > 1e-30 {
                let trial = objective(&k_alpha, &alpha, b - step_b * g_b);
                if trial <= value - 0.5 * step_b * g_b * g_b {
                    moved |= trial < value;
                    b -= step_b * g_b;
                    value = trial;
                    break;
                }
                step_b *= 0.5;
            }
        }
        if !moved {
            // No representable descent step is left; the gradient is at
            // round-off level.
            converged = true;
            break;
        }
    }
    let d = x.cols();
    let mut mean = vec![0.0; d];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut weights = vec![0.0; d];
    for (a, row) in alpha.iter().zip(x.iter_rows()) {
        if *a != 0.0 {
            for ((w, v), m) in weights.iter_mut().zip(row).zip(&mean) {
                *w += a * (v - m);
            }
        }
    }
    LogisticModel {
        intercept: b - dot(&weights, &mean),
        weights,
        iterations,
        converged,
    }
}

impl LogisticModel {
    pub fn decision(&self, row: &[f64]) -> f64 {
        dot(&self.weights, row) + self.intercept
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shallow::kernel::gram;

    fn primal_objective(x: &[f64], y: &[f64], w: f64, b: f64, c: f64) -> f64 {
        x.iter().zip(y).map(|(xi, yi)| softplus(-yi * (w * xi + b))).sum::<f64>() + w * w / (2.0 * c)
    }

    #[test]
    fn matches_brute_force_minimum_in_one_dimension() {
        let xs = [-1.5, -0.4, 0.3, 0.2, 1.1, 2.0, -0.7];
        let ys = [-1.0, -1.0, 1.0, -1.0, 1.0, 1.0, 1.0];
        let x = Matrix::new(7, 1, xs.to_vec()).unwrap();
        for c in [0.01, 1.0] {
            let m = fit(&x, &gram(&x), &ys, c);
            assert!(m.converged);
            // Coarse-to-fine grid minimisation of the same objective.
            let (mut bw, mut bb) = (0.0, 0.0);
            let mut span = 4.0;
            for _ in 0..30 {
                let mut best = f64::INFINITY;
                let (cw, cb) = (bw, bb);
                for i in -20..=20 {
                    for j in -20..=20 {
                        let (w, b) = (cw + span * i as f64 / 20.0, cb + span * j as f64 / 20.0);
                        let v = primal_objective(&xs, &ys, w, b, c);
                        if v < best {
                            best = v;
                            bw = w;
                            bb = b;
                        }
                    }
                }
                span /= 4.0;
            }
            assert!((m.weights[0] - bw).abs() < 1e-5, "w {} vs {bw}", m.weights[0]);
            assert!((m.intercept - bb).abs() < 1e-5, "b {} vs {bb}", m.intercept);
        }
    }

    #[test]
    fn heavy_regularisation_gives_log_odds_intercept() {
        let x = Matrix::new(5, 2, vec![1.0, 0.0, 0.5, 1.0, -1.0, 2.0, 0.0, 0.0, 2.0, -1.0]).unwrap();
        let y = [1.0, 1.0, 1.0, -1.0, 1.0];
        let m = fit(&x, &gram(&x), &y, 1e-6);
        assert!(m.weights.iter().all(|w| w.abs() < 1e-4));
        assert!((m.intercept - (4.0f64 / 1.0).ln()).abs() < 1e-3);
    }
}
