//! Reference implementations shared by the integration tests and the
//! acceptance run. Kept deliberately naive.
#![allow(dead_code)]

use qlf::conv::Filter;
use qlf::eval::SplitPlan;
use qlf::{Matrix, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Zero-padded convolution as the literal quadruple loop.
pub fn conv_oracle(plane: &Tensor3, f: &Filter) -> Tensor3 {
    let (h, w) = (plane.height() as isize, plane.width() as isize);
    let (h1, h2) = (f.half_height() as isize, f.half_width() as isize);
    let mut out = Tensor3::zeros(1, h as usize, w as usize).unwrap();
    for r in 0..h {
        for s in 0..w {
            let mut acc = 0.0;
            for u in -h1..=h1 {
                for v in -h2..=h2 {
                    let (rr, ss) = (r + u, s + v);
                    if rr >= 0 && rr < h && ss >= 0 && ss < w {
                        acc += f.at(u, v) * plane.get(0, rr as usize, ss as usize);
                    }
                }
            }
            out.set(0, r as usize, s as usize, acc);
        }
    }
    out
}

pub fn random_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor3 {
    Tensor3::from_vec(1, h, w, (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_filter(rng: &mut ChaCha8Rng, h1: usize, h2: usize) -> Filter {
    let n = (2 * h1 + 1) * (2 * h2 + 1);
    Filter::new(h1, h2, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Macro F1 by explicit confusion-matrix enumeration.
pub fn f1_oracle(t: &[usize], p: &[usize]) -> f64 {
    let k = t.iter().chain(p).max().unwrap() + 1;
    let mut confusion = vec![vec![0usize; k]; k];
    for (&a, &b) in t.iter().zip(p) {
        confusion[a][b] += 1;
    }
    let mut sum = 0.0;
    let mut classes = 0;
    for c in 0..k {
        let support: usize = confusion[c].iter().sum();
        if support == 0 {
            continue;
        }
        let tp = confusion[c][c] as f64;
        let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = tp / support as f64;
        sum += if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        classes += 1;
    }
    sum / classes as f64
}

/// Partition, 80/10/10 size and per-class stratification checks.
pub fn split_violation(labels: &[usize], plan: &SplitPlan) -> Option<String> {
    let n = labels.len();
    let mut seen = vec![0u8; n];
    for &i in plan.train_idx.iter().chain(&plan.val_idx).chain(&plan.test_idx) {
        seen[i] += 1;
    }
    if seen.iter().any(|&s| s != 1) {
        return Some("parts must be disjoint and cover every index".into());
    }
    let parts = [(&plan.train_idx, 0.8), (&plan.val_idx, 0.1), (&plan.test_idx, 0.1)];
    for (part, frac) in parts {
        if (part.len() as f64 - frac * n as f64).abs() > 1.0 {
            return Some(format!("part of {} for fraction {frac} of {n}", part.len()));
        }
    }
    let k = labels.iter().max().unwrap() + 1;
    for c in 0..k {
        let nc = labels.iter().filter(|&&l| l == c).count() as f64;
        for (part, frac) in parts {
            let got = part.iter().filter(|&&i| labels[i] == c).count() as f64;
            if (got - frac * nc).abs() > 1.0 + 1e-9 {
                return Some(format!("class {c}: {got} vs {}", frac * nc));
            }
        }
    }
    None
}

pub fn random_labels(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = rng.gen_range(2..=5);
    let mut labels: Vec<usize> = (0..k).flat_map(|c| [c; 3]).collect();
    let extra = rng.gen_range(0..200);
    labels.extend((0..extra).map(|_| rng.gen_range(0..k)));
    labels
}

pub fn blobs(seed: u64, per_class: usize, centres: &[[f64; 2]], sd: f64) -> (Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sd).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..per_class {
            rows.push(vec![centre[0] + noise.sample(&mut rng), centre[1] + noise.sample(&mut rng)]);
            labels.push(c);
        }
    }
    (Matrix::from_rows(&rows).unwrap(), labels)
}

pub fn three_blobs() -> (Matrix, Vec<usize>) {
    blobs(11, 30, &[[0.0, 0.0], [6.0, 0.0], [3.0, 5.0]], 0.5)
}
