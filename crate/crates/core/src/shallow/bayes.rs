//! Gaussian naive Bayes.

use serde::{Deserialize, Serialize};

use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub log_priors: Vec<f64>,
    /// `log prior - 1/2 sum log(2 pi var)` per class.
    pub log_norms: Vec<f64>,
    /// Additive variance floor actually applied.
    pub floor: f64,
}

/// Fits class-conditional means and variances. The floor added to every
/// variance is `smoothing * (largest per-feature variance + 1e-12)`, which
/// keeps constant pixels usable.
pub(crate) fn fit(x: &Matrix, y: &[usize], classes: usize, smoothing: f64) -> GaussianNb {
    let d = x.cols();
    let n = x.rows();
    let mut counts = vec![0usize; classes];
    let mut means = vec![vec![0.0; d]; classes];
    for (row, &c) in x.iter_rows().zip(y) {
        counts[c] += 1;
        means[c].iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    for (m, &cnt) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= cnt.max(1) as f64);
    }
    let mut variances = vec![vec![0.0; d]; classes];
    for (row, &c) in x.iter_rows().zip(y) {
        for ((s, v), m) in variances[c].iter_mut().zip(row).zip(&means[c]) {
            *s += (v - m) * (v - m);
        }
    }
    // Largest per-feature variance over the whole sample.
    let mut global_mean = vec![0.0; d];
    for row in x.iter_rows() {
        global_mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n as f64);
    }
    let mut global_var = vec![0.0; d];
    for row in x.iter_rows() {
        for ((s, v), m) in global_var.iter_mut().zip(row).zip(&global_mean) {
            *s += (v - m) * (v - m) / n as f64;
        }
    }
    let max_var = global_var.iter().cloned().fold(0.0, f64::max);
    let floor = smoothing * (max_var + 1e-12);
    for (var, &cnt) in variances.iter_mut().zip(&counts) {
        var.iter_mut().for_each(|v| *v = *v / cnt.max(1) as f64 + floor);
    }
    let log_priors: Vec<f64> = counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect();
    let log_norms = variances
        .iter()
        .zip(&log_priors)
        .map(|(var, lp)| lp - 0.5 * var.iter().map(|v| (std::f64::consts::TAU * v).ln()).sum::<f64>())
        .collect();
    GaussianNb {
        means,
        variances,
        log_priors,
        log_norms,
        floor,
    }
}

impl GaussianNb {
    /// Unnormalised log posterior of every class.
    pub fn log_scores(&self, row: &[f64]) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.variances)
            .zip(&self.log_norms)
            .map(|((m, v), ln)| {
                ln - 0.5
                    * row
                        .iter()
                        .zip(m)
                        .zip(v)
                        .map(|((x, mu), var)| (x - mu) * (x - mu) / var)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Posterior probabilities (exp-normalised log scores).
    pub fn posterior(&self, row: &[f64]) -> Vec<f64> {
        let s = self.log_scores(row);
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_statistics() {
        let x = Matrix::new(4, 1, vec![0.0, 0.0, 10.0, 10.0]).unwrap();
        let m = fit(&x, &[0, 0, 1, 1], 2, 1e-9);
        assert_eq!(m.means, vec![vec![0.0], vec![10.0]]);
        let floor = 1e-9 * (25.0 + 1e-12);
        assert_eq!(m.floor, floor);
        assert_eq!(m.variances, vec![vec![floor], vec![floor]]);
    }

    #[test]
    fn posterior_sums_to_one() {
        let x = Matrix::new(6, 2, vec![0.0, 1.0, 0.5, 0.7, 3.0, 3.0, 2.5, 3.5, 6.0, 0.0, 6.5, 0.2]).unwrap();
        let m = fit(&x, &[0, 0, 1, 1, 2, 2], 3, 1e-3);
        for q in [[0.0, 0.0], [3.0, 3.0], [10.0, -4.0], [1.7, 2.2]] {
            let p = m.posterior(&q);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
