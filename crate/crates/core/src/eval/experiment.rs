//! Repeated-shuffle experiments over a model x channel-composition matrix.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::f1_macro;
use super::search::{search_prepared, GridFailure};
use super::split::{plan_splits, SplitFractions, SplitPlan, SHUFFLES};
use crate::cnn::{build_model, train, ArchSpec, BlockSpec, CnnModel, Labeled, TrainConfig};
use crate::datagen::{Dataset, LabelScheme};
use crate::error::{Error, Result};
use crate::seed::mix_seed;
use crate::shallow::{Grids, HyperParams, ModelKind, TrainingSet};
use crate::tensor::{channel_select, flatten_all, ChannelMask, Matrix, Tensor3};

const CNN_INIT_STREAM: u64 = 0x434e_4e49;
const CNN_TRAIN_STREAM: u64 = 0x434e_4e54;

/// A model family in the experiment matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Learner {
    Shallow(ModelKind),
    Cnn,
}

impl Learner {
    /// The seven shallow kinds followed by the CNN.
    pub fn all() -> Vec<Learner> {
        ModelKind::ALL
            .into_iter()
            .map(Learner::Shallow)
            .chain([Learner::Cnn])
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Learner::Shallow(k) => k.name(),
            Learner::Cnn => "cnn",
        }
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Learner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("cnn") {
            Ok(Learner::Cnn)
        } else {
            s.parse().map(Learner::Shallow)
        }
    }
}

impl TryFrom<String> for Learner {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Learner> for String {
    fn from(l: Learner) -> String {
        l.name().to_string()
    }
}

/// CNN shape (input size and class count come from the data) and training
/// schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnSettings {
    pub kernel_half: usize,
    pub stem_maps: usize,
    pub blocks: Vec<BlockSpec>,
    pub dense_hidden: usize,
    pub train: TrainConfig,
}

impl Default for CnnSettings {
    /// The desk architecture with a third pooled block: at 54x81 the extra
    /// pooling shrinks the dense head fourfold and generalises better.
    fn default() -> Self {
        let desk = ArchSpec::desk(1, 16, 16, 2);
        let mut blocks = desk.blocks;
        blocks.push(BlockSpec {
            maps: 16,
            pool_after: true,
        });
        CnnSettings {
            kernel_half: desk.kernel_half,
            stem_maps: desk.stem_maps,
            blocks,
            dense_hidden: desk.dense_hidden,
            train: TrainConfig::default(),
        }
    }
}

impl CnnSettings {
    pub fn arch(&self, channels: usize, height: usize, width: usize, classes: usize) -> ArchSpec {
        ArchSpec {
            input_channels: channels,
            input_height: height,
            input_width: width,
            kernel_half: self.kernel_half,
            stem_maps: self.stem_maps,
            blocks: self.blocks.clone(),
            dense_hidden: self.dense_hidden,
            classes,
        }
    }
}

/// Everything that is fixed across the cells of one report.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialPlan {
    pub base_seed: u64,
    pub splits: Vec<SplitPlan>,
    pub compositions: Vec<ChannelMask>,
    pub learners: Vec<Learner>,
    pub grids: Grids,
    pub cnn: CnnSettings,
    /// Worker threads; results do not depend on it.
    pub jobs: usize,
}

impl TrialPlan {
    pub fn new(
        labels: &[usize],
        base_seed: u64,
        fractions: SplitFractions,
        learners: Vec<Learner>,
        compositions: Vec<ChannelMask>,
        grids: Grids,
        cnn: CnnSettings,
    ) -> Result<Self> {
        let plan = TrialPlan {
            base_seed,
            splits: plan_splits(labels, fractions, base_seed)?,
            compositions,
            learners,
            grids,
            cnn,
            jobs: 1,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs.max(1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.splits.len() != SHUFFLES {
            return Err(Error::invalid(format!(
                "a trial plan needs exactly {SHUFFLES} shuffles, got {}",
                self.splits.len()
            )));
        }
        if self.learners.is_empty() || self.compositions.is_empty() {
            return Err(Error::invalid("a trial plan needs at least one model and one composition"));
        }
        self.grids.validate()?;
        self.cnn.train.validate()
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        let n = data.len();
        for plan in &self.splits {
            let all = plan.train_idx.iter().chain(&plan.val_idx).chain(&plan.test_idx);
            if plan.len() != n || all.clone().any(|&i| i >= n) {
                return Err(Error::Consistency(format!(
                    "split {} covers {} indices but the dataset has {n} images",
                    plan.shuffle_index,
                    plan.len()
                )));
            }
        }
        let channels = data.images.first().map_or(0, Tensor3::channels);
        for mask in &self.compositions {
            if let Some(c) = mask.selection().iter().find(|c| c.index() >= channels) {
                return Err(Error::shape(format!(
                    "composition {mask} needs channel {c:?}, images have {channels} channels"
                )));
            }
        }
        Ok(())
    }
}

/// How the reported model of one shuffle was chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Selection {
    Grid {
        params: HyperParams,
        grid_index: usize,
        val_f1: f64,
        grid_scores: Vec<f64>,
        failures: Vec<GridFailure>,
    },
    Epoch {
        best_epoch: usize,
        val_f1: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShuffleResult {
    pub shuffle_index: usize,
    pub plan_digest: String,
    pub train_f1: f64,
    pub test_f1: f64,
    pub selection: Selection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub model: Learner,
    pub composition: ChannelMask,
    pub train_mean: f64,
    pub train_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
    pub shuffles: Vec<ShuffleResult>,
}

impl CellReport {
    pub fn train_scores(&self) -> Vec<f64> {
        self.shuffles.iter().map(|s| s.train_f1).collect()
    }

    pub fn test_scores(&self) -> Vec<f64> {
        self.shuffles.iter().map(|s| s.test_f1).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scheme: LabelScheme,
    pub samples: usize,
    pub base_seed: u64,
    pub plan_seeds: Vec<u64>,
    pub plan_digests: Vec<String>,
    /// Models in plan order, each with its compositions in plan order.
    pub cells: Vec<CellReport>,
}

impl EvalReport {
    pub fn cell(&self, model: Learner, composition: &ChannelMask) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.model == model && &c.composition == composition)
    }
}

/// Mean and sample (n - 1) standard deviation; the deviation of a single
/// value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Channel-selected images and (if needed) their flattened feature matrix.
struct Composed {
    images: Vec<Tensor3>,
    features: Option<Matrix>,
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

fn run_unit(plan: &TrialPlan, data: &Dataset, composed: &Composed, split: &SplitPlan) -> Result<Vec<ShuffleResult>> {
    let labels = &data.labels;
    let (ytr, yva, yte) = (pick(labels, &split.train_idx), pick(labels, &split.val_idx), pick(labels, &split.test_idx));
    let digest = split.digest();
    let shallow_train = match &composed.features {
        Some(x) => Some((
            TrainingSet::new(Arc::new(x.select_rows(&split.train_idx)), ytr.clone())?,
            x.select_rows(&split.val_idx),
            x.select_rows(&split.test_idx),
        )),
        None => None,
    };
    let mut out = Vec::with_capacity(plan.learners.len());
    for &learner in &plan.learners {
        let result = match learner {
            Learner::Shallow(kind) => {
                let (set, xva, xte) = shallow_train.as_ref().expect("features are built for shallow models");
                let grid = plan.grids.points(kind);
                let found = search_prepared(&grid, set, xva, &yva, plan.base_seed, split.shuffle_index)?;
                ShuffleResult {
                    shuffle_index: split.shuffle_index,
                    plan_digest: digest.clone(),
                    train_f1: f1_macro(&ytr, &found.model.predict(set.features())?)?,
                    test_f1: f1_macro(&yte, &found.model.predict(xte)?)?,
                    selection: Selection::Grid {
                        params: found.best,
                        grid_index: found.best_index,
                        val_f1: found.val_score,
                        grid_scores: found.scores,
                        failures: found.failures,
                    },
                }
            }
            Learner::Cnn => cnn_unit(plan, data, composed, split, digest.clone())?.0,
        };
        out.push(result);
    }
    Ok(out)
}

fn cnn_unit(
    plan: &TrialPlan,
    data: &Dataset,
    composed: &Composed,
    split: &SplitPlan,
    digest: String,
) -> Result<(ShuffleResult, CnnModel)> {
    let labels = &data.labels;
    let (ytr, yva, yte) = (pick(labels, &split.train_idx), pick(labels, &split.val_idx), pick(labels, &split.test_idx));
    let (itr, iva, ite) = (
        pick(&composed.images, &split.train_idx),
        pick(&composed.images, &split.val_idx),
        pick(&composed.images, &split.test_idx),
    );
    let (c, h, w) = itr[0].shape();
    let arch = plan.cnn.arch(c, h, w, data.class_count());
    let s = split.shuffle_index as u64;
    let model = build_model(&arch, mix_seed(&[plan.base_seed, CNN_INIT_STREAM, s]))?;
    let cfg = TrainConfig {
        seed: mix_seed(&[plan.base_seed, CNN_TRAIN_STREAM, s]),
        ..plan.cnn.train.clone()
    };
    let (best, history) = train(&model, Labeled::new(&itr, &ytr)?, Labeled::new(&iva, &yva)?, &cfg)?;
    let result = ShuffleResult {
        shuffle_index: split.shuffle_index,
        plan_digest: digest,
        train_f1: f1_macro(&ytr, &best.predict(&itr)?)?,
        test_f1: f1_macro(&yte, &best.predict(&ite)?)?,
        selection: Selection::Epoch {
            best_epoch: history.best_epoch,
            val_f1: history.epochs[history.best_epoch].val_f1,
        },
    };
    Ok((result, best))
}

fn compose(data: &Dataset, mask: &ChannelMask, features: bool) -> Result<Composed> {
    let images = data
        .images
        .iter()
        .map(|img| channel_select(img, mask))
        .collect::<Result<Vec<_>>>()?;
    let features = if features { Some(flatten_all(&images)?) } else { None };
    Ok(Composed { images, features })
}

/// One model on one composition and one split of `plan`, with the same seeds
/// as the matching cell of [`run_experiment`]. The trained network is
/// returned for the CNN.
pub fn run_single(
    plan: &TrialPlan,
    data: &Dataset,
    learner: Learner,
    composition: &ChannelMask,
    shuffle_index: usize,
) -> Result<(ShuffleResult, Option<CnnModel>)> {
    plan.validate()?;
    let single = TrialPlan {
        learners: vec![learner],
        compositions: vec![composition.clone()],
        ..plan.clone()
    };
    single.check_dataset(data)?;
    let split = plan
        .splits
        .get(shuffle_index)
        .ok_or_else(|| Error::invalid(format!("shuffle {shuffle_index} does not exist (0..{SHUFFLES})")))?;
    let composed = compose(data, composition, learner != Learner::Cnn)?;
    match learner {
        Learner::Cnn => cnn_unit(plan, data, &composed, split, split.digest()).map(|(r, m)| (r, Some(m))),
        Learner::Shallow(_) => {
            let mut rows = run_unit(&single, data, &composed, split)?;
            Ok((rows.remove(0), None))
        }
    }
}

/// Runs every (model, composition, shuffle) cell of `plan` on `data`.
///
/// For shallow models each shuffle grid-searches on the validation slice and
/// reports the winning model (fitted on the training slice) on the training
/// and test slices; the CNN trains on the training slice and keeps the epoch
/// with the best validation score. Work is spread over `plan.jobs` threads
/// and merged in a fixed order, so the report does not depend on it.
pub fn run_experiment(plan: &TrialPlan, data: &Dataset) -> Result<EvalReport> {
    plan.validate()?;
    plan.check_dataset(data)?;
    let needs_features = plan.learners.iter().any(|l| matches!(l, Learner::Shallow(_)));
    let composed: Vec<Composed> = plan
        .compositions
        .iter()
        .map(|mask| compose(data, mask, needs_features))
        .collect::<Result<_>>()?;

    let units: Vec<(usize, usize)> = (0..plan.compositions.len())
        .flat_map(|c| (0..plan.splits.len()).map(move |s| (c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.jobs.max(1))
        .build()
        .map_err(|e| Error::State(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Vec<ShuffleResult>> = pool.install(|| {
        units
            .par_iter()
            .map(|&(c, s)| run_unit(plan, data, &composed[c], &plan.splits[s]))
            .collect::<Result<_>>()
    })?;

    let shuffles = plan.splits.len();
    let mut cells = Vec::with_capacity(plan.learners.len() * plan.compositions.len());
    for (li, &model) in plan.learners.iter().enumerate() {
        for (ci, mask) in plan.compositions.iter().enumerate() {
            let rows: Vec<ShuffleResult> = (0..shuffles).map(|s| results[ci * shuffles + s][li].clone()).collect();
            let (train_mean, train_std) = mean_std(&rows.iter().map(|r| r.train_f1).collect::<Vec<_>>());
            let (test_mean, test_std) = mean_std(&rows.iter().map(|r| r.test_f1).collect::<Vec<_>>());
            cells.push(CellReport {
                model,
                composition: mask.clone(),
                train_mean,
                train_std,
                test_mean,
                test_std,
                shuffles: rows,
            });
        }
    }
    Ok(EvalReport {
        scheme: data.scheme,
        samples: data.len(),
        base_seed: plan.base_seed,
        plan_seeds: plan.splits.iter().map(|p| p.seed).collect(),
        plan_digests: plan.splits.iter().map(SplitPlan::digest).collect(),
        cells,
    })
}

/// [`run_experiment`] over the compositions R, RG and RGB.
pub fn run_ablation(data: &Dataset, base_plan: &TrialPlan) -> Result<EvalReport> {
    if let Some(img) = data.images.iter().find(|i| i.channels() != 3) {
        return Err(Error::shape(format!(
            "channel ablation needs 3-channel images, got {}",
            img.channels()
        )));
    }
    let plan = TrialPlan {
        compositions: ChannelMask::ablation_set(),
        ..base_plan.clone()
    };
    run_experiment(&plan, data)
}
