mod common;

use common::{f1_oracle, random_labels, split_violation};
use proptest::prelude::*;
use qlf::cnn::TrainConfig;
use qlf::datagen::{Dataset, LabelScheme};
use qlf::eval::report::{plot_data, to_csv, to_json};
use qlf::eval::{
    f1_macro, grid_search, run_ablation, run_experiment, stratified_shuffle_split, CnnSettings, Learner, Selection,
    SplitFractions, SplitPlan, TrialPlan,
};
use qlf::shallow::{Grids, HyperParams, ModelKind};
use qlf::{ChannelMask, Error, Matrix, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn macro_f1_matches_confusion_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let n = rng.gen_range(1..60);
        let k = rng.gen_range(1..=5);
        let t: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let p: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        assert!((f1_macro(&t, &p).unwrap() - f1_oracle(&t, &p)).abs() < 1e-12);
    }
}

fn check_split(labels: &[usize], plan: &SplitPlan) {
    if let Some(v) = split_violation(labels, plan) {
        panic!("{v}");
    }
}

#[test]
fn split_invariants_hold_for_1000_label_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let labels = random_labels(&mut rng);
        let plan = stratified_shuffle_split(&labels, SplitFractions::default(), rng.gen()).unwrap();
        check_split(&labels, &plan);
    }
}

proptest! {
    #[test]
    fn split_is_a_stratified_partition(seed in any::<u64>(), label_seed in any::<u64>()) {
        let labels = random_labels(&mut ChaCha8Rng::seed_from_u64(label_seed));
        let plan = stratified_shuffle_split(&labels, SplitFractions::default(), seed).unwrap();
        check_split(&labels, &plan);
        prop_assert_eq!(plan.clone(), stratified_shuffle_split(&labels, SplitFractions::default(), seed).unwrap());
    }
}

/// Groups far apart on a line: a centre point flanked by two points of the
/// other class. Validation points sit next to the centres, so only the
/// single nearest neighbour gets them right.
fn planted_knn() -> (Matrix, Vec<usize>, SplitPlan) {
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for g in 0..8 {
        let c = 100.0 * g as f64;
        let centre = g % 2;
        for (x, l, is_val) in [
            (c, centre, false),
            (c - 1.0, 1 - centre, false),
            (c + 1.0, 1 - centre, false),
            (c + 0.01, centre, true),
        ] {
            if is_val { val.push(xs.len()) } else { train.push(xs.len()) }
            xs.push(x);
            labels.push(l);
        }
    }
    let plan = SplitPlan {
        shuffle_index: 0,
        seed: 0,
        train_idx: train,
        val_idx: val,
        test_idx: vec![],
    };
    (Matrix::new(xs.len(), 1, xs).unwrap(), labels, plan)
}

#[test]
fn grid_search_selects_the_only_perfect_point() {
    let (x, y, plan) = planted_knn();
    let grid = Grids::default().points(ModelKind::Knc);
    let r = grid_search(ModelKind::Knc, &grid, &plan, &x, &y, 1).unwrap();
    assert_eq!(r.best, HyperParams::Knc { k: 1 });
    assert_eq!(r.val_score, 1.0);
    assert!(r.scores[1..].iter().all(|&s| s < 1.0));
}

#[test]
fn grid_search_ties_and_failures() {
    let (x, y, plan) = planted_knn();
    let single = [HyperParams::Knc { k: 3 }];
    assert_eq!(grid_search(ModelKind::Knc, &single, &plan, &x, &y, 1).unwrap().best, single[0]);
    // Repeated points tie: the first wins. A failing point scores -1.
    let grid = [HyperParams::Knc { k: 0 }, HyperParams::Knc { k: 3 }, HyperParams::Knc { k: 3 }];
    let r = grid_search(ModelKind::Knc, &grid, &plan, &x, &y, 1).unwrap();
    assert_eq!(r.best_index, 1);
    assert_eq!(r.scores[0], -1.0);
    assert_eq!(r.failures.len(), 1);
    assert_eq!(r.failures[0].grid_index, 0);
    assert!(grid_search(ModelKind::Knc, &[], &plan, &x, &y, 1).is_err());
    assert!(grid_search(ModelKind::Lr, &single, &plan, &x, &y, 1).is_err());
}

/// 3-channel images whose class shows only as the brightness of a green
/// patch; red and blue are pure noise.
fn green_signal_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (16, 16);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let class = i % 3;
        let mut img = Tensor3::zeros(3, h, w).unwrap();
        for c in 0..3 {
            for r in 0..h {
                for s in 0..w {
                    let mut v = rng.gen_range(0.0..0.6);
                    if c == 1 && (4..12).contains(&r) && (4..12).contains(&s) {
                        v = 0.2 + 0.3 * class as f64 + rng.gen_range(-0.05..0.05);
                    }
                    img.set(c, r, s, v);
                }
            }
        }
        images.push(img);
        labels.push(class);
    }
    let fractions = labels.iter().map(|&l| 0.1 * l as f64).collect();
    Dataset::new(images, labels, LabelScheme::Rfpp3, fractions).unwrap()
}

fn small_grids() -> Grids {
    Grids {
        c: vec![0.1, 10.0],
        gamma: vec![1e-2],
        k: vec![1, 5],
        trees: vec![20],
        depth: vec![2, 4],
        shrinkage: vec![0.1],
        var_smoothing: vec![1e-9],
    }
}

fn small_cnn() -> CnnSettings {
    CnnSettings {
        train: TrainConfig {
            learning_rate: 0.02,
            epochs: 8,
            batch_size: 8,
            ..TrainConfig::default()
        },
        ..CnnSettings::default()
    }
}

fn plan_for(data: &Dataset, learners: Vec<Learner>, compositions: Vec<ChannelMask>) -> TrialPlan {
    TrialPlan::new(&data.labels, 3, SplitFractions::default(), learners, compositions, small_grids(), small_cnn())
        .unwrap()
}

#[test]
fn single_cell_report_shape_and_memorisation() {
    let data = green_signal_dataset(60, 1);
    let mut plan = plan_for(&data, vec![Learner::Shallow(ModelKind::Knc)], vec![ChannelMask::rgb()]);
    plan.grids.k = vec![1];
    let report = run_experiment(&plan, &data).unwrap();
    assert_eq!(report.cells.len(), 1);
    let cell = &report.cells[0];
    assert_eq!(cell.shuffles.len(), 10);
    assert_eq!((cell.train_mean, cell.train_std), (1.0, 0.0));
    assert!(cell.test_scores().iter().all(|s| (0.0..=1.0).contains(s)));
}

#[test]
fn ablation_matrix_is_deterministic_and_shares_splits() {
    let data = green_signal_dataset(60, 2);
    let plan = plan_for(&data, Learner::all(), vec![ChannelMask::rgb()]);
    let a = run_ablation(&data, &plan).unwrap();
    assert_eq!(a.cells.len(), 24);
    for cell in &a.cells {
        let digests: Vec<&str> = cell.shuffles.iter().map(|s| s.plan_digest.as_str()).collect();
        assert_eq!(digests, a.plan_digests.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(matches!(
            (&cell.model, &cell.shuffles[0].selection),
            (Learner::Cnn, Selection::Epoch { .. }) | (Learner::Shallow(_), Selection::Grid { .. })
        ));
    }
    // The class signal lives in green only.
    for model in Learner::all() {
        let r = a.cell(model, &ChannelMask::red()).unwrap().test_mean;
        let rg = a.cell(model, &ChannelMask::red_green()).unwrap().test_mean;
        assert!(rg > r, "{model}: RG {rg} vs R {r}");
    }
    let b = run_ablation(&data, &plan.clone().with_jobs(3)).unwrap();
    assert_eq!(to_json(&a).unwrap(), to_json(&b).unwrap());
    assert_eq!(to_csv(&a), to_csv(&b));
    assert_eq!(plot_data(&a), plot_data(&b));
    let csv = to_csv(&a);
    assert_eq!(csv.lines().count(), 25);
    assert!(csv.starts_with("model,composition,train_mean,train_std,test_mean,test_std\n"));
}

#[test]
fn identical_images_score_the_majority_baseline() {
    // 60/20/20 mix with the majority class on the lowest indices.
    let labels: Vec<usize> = [vec![0; 30], vec![1; 10], vec![2; 10]].concat();
    let img = Tensor3::new(3, 16, 16, 0.5).unwrap();
    let data = Dataset::new(vec![img; 50], labels.clone(), LabelScheme::Rfpp3, vec![0.0; 50]).unwrap();
    let plan = plan_for(&data, Learner::all(), vec![ChannelMask::rgb()]);
    let report = run_experiment(&plan, &data).unwrap();
    for cell in &report.cells {
        for (s, split) in cell.shuffles.iter().zip(&plan.splits) {
            let test: Vec<usize> = split.test_idx.iter().map(|&i| labels[i]).collect();
            let train: Vec<usize> = split.train_idx.iter().map(|&i| labels[i]).collect();
            let baseline = |y: &[usize]| f1_macro(y, &vec![0; y.len()]).unwrap();
            assert_eq!(s.test_f1, baseline(&test), "{} shuffle {}", cell.model, s.shuffle_index);
            assert_eq!(s.train_f1, baseline(&train), "{} shuffle {}", cell.model, s.shuffle_index);
        }
    }
}

#[test]
fn ablation_rejects_non_rgb_data() {
    let data = green_signal_dataset(30, 3);
    let grey: Vec<Tensor3> = data.images.iter().map(|i| i.channel(0)).collect();
    let grey = Dataset::new(grey, data.labels.clone(), data.scheme, data.fractions.clone()).unwrap();
    let plan = plan_for(&grey, vec![Learner::Shallow(ModelKind::Gnb)], vec![ChannelMask::red()]);
    assert!(matches!(run_ablation(&grey, &plan), Err(Error::Shape(_))));
}
