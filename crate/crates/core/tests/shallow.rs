mod common;

use common::{blobs, three_blobs};
use qlf::eval::metrics::f1_macro;
use qlf::shallow::{
    fit, ova_fit, predict, BinaryScorer, FittedModel, Grids, HyperParams, Learned, LogisticModel, ModelKind, Node,
};
use qlf::{Error, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_problem(seed: u64, n: usize, d: usize, classes: usize) -> (Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    let labels = (0..n).map(|i| i % classes).collect();
    (Matrix::from_rows(&rows).unwrap(), labels)
}

#[test]
fn every_kind_separates_three_blobs_at_some_default_grid_point() {
    let (x, y) = three_blobs();
    let grids = Grids::default();
    for kind in ModelKind::ALL {
        let best = grids
            .points(kind)
            .iter()
            .map(|hp| {
                let m = fit(kind, &x, &y, hp, 5).unwrap();
                f1_macro(&y, &predict(&m, &x).unwrap()).unwrap()
            })
            .fold(0.0, f64::max);
        assert_eq!(best, 1.0, "{kind} never reaches training F1 1.0");
    }
}

#[test]
fn linear_svm_one_vs_all_fits_blobs_exactly() {
    let (x, y) = three_blobs();
    let m = ova_fit(ModelKind::SvmcL, &x, &y, &HyperParams::SvmcL { c: 1.0 }, 0).unwrap();
    assert_eq!(m.predict(&x).unwrap(), y);
}

#[test]
fn two_class_one_vs_all_agrees_with_binary_sign() {
    let (x, y) = blobs(4, 20, &[[0.0, 0.0], [1.5, 1.0]], 0.8);
    let params = [
        HyperParams::Lr { c: 1.0 },
        HyperParams::SvmcK { c: 1.0, gamma: 0.5 },
        HyperParams::SvmcL { c: 1.0 },
        HyperParams::Gnb { var_smoothing: 1e-9 },
        HyperParams::Gbc {
            trees: 20,
            depth: 2,
            shrinkage: 0.1,
        },
        HyperParams::Knc { k: 3 },
        HyperParams::Rfc { trees: 10, depth: 3 },
    ];
    let (probe, _) = random_problem(9, 200, 2, 2);
    let probe = Matrix::from_rows(&probe.iter_rows().map(|r| vec![r[0] * 4.0 - 1.0, r[1] * 4.0 - 1.0]).collect::<Vec<_>>())
        .unwrap();
    for hp in params {
        let m = ova_fit(hp.kind(), &x, &y, &hp, 3).unwrap();
        let Learned::OneVsAll(scorers) = &m.learned else {
            panic!("expected one-vs-all scorers")
        };
        assert_eq!(scorers.len(), 1);
        let by_sign: Vec<usize> = probe.iter_rows().map(|r| (scorers[0].decision(r) > 0.0) as usize).collect();
        assert_eq!(m.predict(&probe).unwrap(), by_sign, "{}", hp.kind());
    }
}

#[test]
fn tied_scorers_predict_class_zero() {
    let zero = BinaryScorer::Lr(LogisticModel {
        weights: vec![0.0, 0.0],
        intercept: 0.0,
        iterations: 0,
        converged: true,
    });
    let m = FittedModel {
        kind: ModelKind::Lr,
        params: HyperParams::Lr { c: 1.0 },
        classes: 3,
        features: 2,
        learned: Learned::OneVsAll(vec![zero.clone(), zero.clone(), zero]),
    };
    let (x, _) = random_problem(1, 25, 2, 3);
    assert!(m.predict(&x).unwrap().iter().all(|&c| c == 0));
}

#[test]
fn one_vs_all_rejects_missing_class() {
    let (x, _) = random_problem(2, 6, 2, 3);
    let r = ova_fit(ModelKind::Lr, &x, &[0, 0, 1, 3, 3, 1], &HyperParams::Lr { c: 1.0 }, 0);
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
}

#[test]
fn gnb_midpoint_tie_goes_to_class_zero() {
    let x = Matrix::new(4, 1, vec![-1.0, 1.0, 9.0, 11.0]).unwrap();
    let m = fit(ModelKind::Gnb, &x, &[0, 0, 1, 1], &HyperParams::Gnb { var_smoothing: 1e-9 }, 0).unwrap();
    let s = m.scores(&[5.0]);
    assert_eq!(s[0], s[1]);
    assert_eq!(m.predict(&Matrix::new(1, 1, vec![5.0]).unwrap()).unwrap(), vec![0]);
}

#[test]
fn knc_single_neighbour_returns_own_label() {
    let (x, y) = random_problem(3, 40, 5, 4);
    let m = fit(ModelKind::Knc, &x, &y, &HyperParams::Knc { k: 1 }, 0).unwrap();
    assert_eq!(m.predict(&x).unwrap(), y);
    let Learned::Knc(knn) = &m.learned else { panic!() };
    assert_eq!(*knn.train, x);
}

#[test]
fn kernel_svm_with_huge_gamma_memorises() {
    let (x, y) = random_problem(5, 60, 4, 3);
    let m = fit(ModelKind::SvmcK, &x, &y, &HyperParams::SvmcK { c: 10.0, gamma: 1e4 }, 0).unwrap();
    assert_eq!(m.predict(&x).unwrap(), y);
}

/// Brute force: every midpoint between distinct values of the bootstrap
/// sample, scored by weighted Gini; first best wins.
fn oracle_split(values: &[f64], labels: &[usize], classes: usize) -> f64 {
    let gini = |idx: &[usize]| {
        let mut counts = vec![0.0; classes];
        idx.iter().for_each(|&i| counts[labels[i]] += 1.0);
        let n = idx.len() as f64;
        if n == 0.0 {
            0.0
        } else {
            n - counts.iter().map(|c| c * c).sum::<f64>() / n
        }
    };
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let all: Vec<usize> = (0..values.len()).collect();
    let parent = gini(&all);
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for w in distinct.windows(2) {
        let t = w[0] + (w[1] - w[0]) / 2.0;
        let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| values[i] <= t);
        let gain = parent - gini(&l) - gini(&r);
        if gain > best.0 {
            best = (gain, t);
        }
    }
    best.1
}

#[test]
fn single_stump_forest_matches_exhaustive_split() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..10.0)).collect();
        let cut = rng.gen_range(3.0..7.0);
        let y: Vec<usize> = xs.iter().map(|&v| (v > cut) as usize ^ (rng.gen_bool(0.1) as usize)).collect();
        if y.iter().all(|&c| c == y[0]) {
            continue;
        }
        let x = Matrix::new(30, 1, xs.clone()).unwrap();
        let m = fit(ModelKind::Rfc, &x, &y, &HyperParams::Rfc { trees: 1, depth: 1 }, seed).unwrap();
        let Learned::Rfc(forest) = &m.learned else { panic!() };
        let boot = &forest.samples[0];
        let bv: Vec<f64> = boot.iter().map(|&i| xs[i]).collect();
        let bl: Vec<usize> = boot.iter().map(|&i| y[i]).collect();
        match &forest.trees[0].nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, oracle_split(&bv, &bl, 2), "seed {seed}");
            }
            Node::Leaf { .. } => assert!(bl.iter().all(|&c| c == bl[0]), "seed {seed}: unsplit impure root"),
        }
    }
}

#[test]
fn fits_are_deterministic_per_seed() {
    let (x, y) = random_problem(8, 45, 6, 3);
    let (probe, _) = random_problem(18, 30, 6, 3);
    for kind in ModelKind::ALL {
        let hp = Grids::default().points(kind)[0];
        let a = fit(kind, &x, &y, &hp, 77).unwrap();
        let b = fit(kind, &x, &y, &hp, 77).unwrap();
        assert_eq!(a, b, "{kind}");
        assert_eq!(a.predict(&probe).unwrap(), b.predict(&probe).unwrap());
    }
}
