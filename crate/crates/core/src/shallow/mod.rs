//! Seven baseline classifiers behind one fit / predict interface.
//!
//! LR, both SVMs and GBC are binary learners adapted to multiclass problems
//! one-vs-all. GNB, KNC and RFC are multiclass by construction and are fitted
//! directly; any kind can still be forced through [`ova_fit`].

mod bayes;
mod boosting;
mod forest;
mod kernel;
mod knn;
mod logistic;
mod svm;
mod tree;

use std::cell::OnceCell;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use bayes::GaussianNb;
pub use boosting::Boosted;
pub use forest::Forest;
pub use knn::KNeighbors;
pub use logistic::LogisticModel;
pub use svm::{solve_dual, DualSolution, Kernel, SvmModel};
pub use tree::{Node, Tree};

use crate::error::{Error, Result};
use crate::seed::mix_seed;
use crate::tensor::Matrix;
use kernel::KernelCache;
use tree::Columns;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "lr")]
    Lr,
    #[serde(rename = "svmk")]
    SvmcK,
    #[serde(rename = "svml")]
    SvmcL,
    #[serde(rename = "gnb")]
    Gnb,
    #[serde(rename = "gbc")]
    Gbc,
    #[serde(rename = "knc")]
    Knc,
    #[serde(rename = "rfc")]
    Rfc,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Lr,
        ModelKind::SvmcK,
        ModelKind::SvmcL,
        ModelKind::Gnb,
        ModelKind::Gbc,
        ModelKind::Knc,
        ModelKind::Rfc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::SvmcK => "svmk",
            ModelKind::SvmcL => "svml",
            ModelKind::Gnb => "gnb",
            ModelKind::Gbc => "gbc",
            ModelKind::Knc => "knc",
            ModelKind::Rfc => "rfc",
        }
    }

    /// Binary learners that need one-vs-all for more than two classes.
    pub fn is_binary(self) -> bool {
        matches!(self, ModelKind::Lr | ModelKind::SvmcK | ModelKind::SvmcL | ModelKind::Gbc)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == lower)
            .ok_or_else(|| Error::invalid(format!("unknown model kind '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum HyperParams {
    Lr { c: f64 },
    #[serde(rename = "svmk")]
    SvmcK { c: f64, gamma: f64 },
    #[serde(rename = "svml")]
    SvmcL { c: f64 },
    Gnb { var_smoothing: f64 },
    Gbc { trees: usize, depth: usize, shrinkage: f64 },
    Knc { k: usize },
    Rfc { trees: usize, depth: usize },
}

impl HyperParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            HyperParams::Lr { .. } => ModelKind::Lr,
            HyperParams::SvmcK { .. } => ModelKind::SvmcK,
            HyperParams::SvmcL { .. } => ModelKind::SvmcL,
            HyperParams::Gnb { .. } => ModelKind::Gnb,
            HyperParams::Gbc { .. } => ModelKind::Gbc,
            HyperParams::Knc { .. } => ModelKind::Knc,
            HyperParams::Rfc { .. } => ModelKind::Rfc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{} {name} must be positive, got {v}", self.kind())))
            }
        };
        let at_least_one = |name: &str, v: usize| {
            if v >= 1 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{} {name} must be at least 1", self.kind())))
            }
        };
        match *self {
            HyperParams::Lr { c } | HyperParams::SvmcL { c } => positive("C", c),
            HyperParams::SvmcK { c, gamma } => positive("C", c).and(positive("gamma", gamma)),
            HyperParams::Gnb { var_smoothing } => positive("var_smoothing", var_smoothing),
            HyperParams::Gbc { trees, depth, shrinkage } => at_least_one("trees", trees)
                .and(at_least_one("depth", depth))
                .and(positive("shrinkage", shrinkage)),
            HyperParams::Knc { k } => at_least_one("k", k),
            HyperParams::Rfc { trees, depth } => at_least_one("trees", trees).and(at_least_one("depth", depth)),
        }
    }
}

impl fmt::Display for HyperParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HyperParams::Lr { c } | HyperParams::SvmcL { c } => write!(f, "C={c}"),
            HyperParams::SvmcK { c, gamma } => write!(f, "C={c} gamma={gamma}"),
            HyperParams::Gnb { var_smoothing } => write!(f, "var_smoothing={var_smoothing}"),
            HyperParams::Gbc { trees, depth, shrinkage } => {
                write!(f, "trees={trees} depth={depth} shrinkage={shrinkage}")
            }
            HyperParams::Knc { k } => write!(f, "k={k}"),
            HyperParams::Rfc { trees, depth } => write!(f, "trees={trees} depth={depth}"),
        }
    }
}

/// Grid-search value lists. Grid points enumerate the cartesian product with
/// the first listed parameter varying slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    pub c: Vec<f64>,
    pub gamma: Vec<f64>,
    pub k: Vec<usize>,
    pub trees: Vec<usize>,
    pub depth: Vec<usize>,
    pub shrinkage: Vec<f64>,
    pub var_smoothing: Vec<f64>,
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            c: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            gamma: vec![1e-4, 1e-3, 1e-2, 1e-1],
            k: vec![1, 3, 5, 11],
            trees: vec![50, 200],
            depth: vec![2, 4, 8],
            shrinkage: vec![0.05, 0.1],
            var_smoothing: vec![1e-9],
        }
    }
}

impl Grids {
    pub fn points(&self, kind: ModelKind) -> Vec<HyperParams> {
        let mut out = Vec::new();
        match kind {
            ModelKind::Lr => out.extend(self.c.iter().map(|&c| HyperParams::Lr { c })),
            ModelKind::SvmcL => out.extend(self.c.iter().map(|&c| HyperParams::SvmcL { c })),
            ModelKind::SvmcK => {
                for &c in &self.c {
                    out.extend(self.gamma.iter().map(|&gamma| HyperParams::SvmcK { c, gamma }));
                }
            }
            ModelKind::Gnb => out.extend(
                self.var_smoothing
                    .iter()
                    .map(|&var_smoothing| HyperParams::Gnb { var_smoothing }),
            ),
            ModelKind::Gbc => {
                for &trees in &self.trees {
                    for &depth in &self.depth {
                        out.extend(
                            self.shrinkage
                                .iter()
                                .map(|&shrinkage| HyperParams::Gbc { trees, depth, shrinkage }),
                        );
                    }
                }
            }
            ModelKind::Knc => out.extend(self.k.iter().map(|&k| HyperParams::Knc { k })),
            ModelKind::Rfc => {
                for &trees in &self.trees {
                    out.extend(self.depth.iter().map(|&depth| HyperParams::Rfc { trees, depth }));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for kind in ModelKind::ALL {
            let points = self.points(kind);
            if points.is_empty() {
                return Err(Error::invalid(format!("empty hyperparameter grid for {kind}")));
            }
            points.iter().try_for_each(HyperParams::validate)?;
        }
        Ok(())
    }
}

/// Real-valued binary decision function; positive means the positive class.
#[derive(Clone, Debug, PartialEq)]
pub enum BinaryScorer {
    Lr(LogisticModel),
    Svm(SvmModel),
    Gbc(Boosted),
    Gnb(GaussianNb),
    Knc(KNeighbors),
    Rfc(Forest),
}

impl BinaryScorer {
    pub fn decision(&self, row: &[f64]) -> f64 {
        match self {
            BinaryScorer::Lr(m) => m.decision(row),
            BinaryScorer::Svm(m) => m.decision(row),
            BinaryScorer::Gbc(m) => m.decision(row),
            BinaryScorer::Gnb(m) => {
                let s = m.log_scores(row);
                s[1] - s[0]
            }
            BinaryScorer::Knc(m) => {
                let v = m.votes(row);
                v[1] - v[0]
            }
            BinaryScorer::Rfc(m) => {
                let p = m.proba(row);
                p[1] - p[0]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Learned {
    /// One scorer per class, or a single scorer for class 1 when there are
    /// exactly two classes (class 0 scores its negation).
    OneVsAll(Vec<BinaryScorer>),
    Gnb(GaussianNb),
    Knc(KNeighbors),
    Rfc(Forest),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub params: HyperParams,
    pub classes: usize,
    pub features: usize,
    pub learned: Learned,
}

/// Index of the first maximum.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl FittedModel {
    /// Per-class scores of one row; the predicted class is their first
    /// maximum.
    pub fn scores(&self, row: &[f64]) -> Vec<f64> {
        match &self.learned {
            Learned::OneVsAll(scorers) if scorers.len() == 1 => {
                let f = scorers[0].decision(row);
                vec![-f, f]
            }
            Learned::OneVsAll(scorers) => scorers.iter().map(|s| s.decision(row)).collect(),
            Learned::Gnb(m) => m.log_scores(row),
            Learned::Knc(m) => m.votes(row),
            Learned::Rfc(m) => m.proba(row),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        if x.cols() != self.features {
            return Err(Error::shape(format!(
                "model trained on {} features, got {}",
                self.features,
                x.cols()
            )));
        }
        if let Some(train) = self.shared_rbf_train() {
            // Each query's distances to the training rows serve every scorer.
            let Learned::OneVsAll(scorers) = &self.learned else { unreachable!() };
            let mut dists = vec![0.0; train.rows()];
            return Ok(x
                .iter_rows()
                .map(|row| {
                    dists.iter_mut().zip(train.iter_rows()).for_each(|(d, t)| *d = kernel::sq_dist(t, row));
                    let mut s: Vec<f64> = scorers
                        .iter()
                        .map(|sc| match sc {
                            BinaryScorer::Svm(m) => m.decision_from_dists(row, &dists),
                            _ => unreachable!(),
                        })
                        .collect();
                    if s.len() == 1 {
                        s.insert(0, -s[0]);
                    }
                    argmax(&s)
                })
                .collect());
        }
        Ok(x.iter_rows().map(|row| argmax(&self.scores(row))).collect())
    }

    fn shared_rbf_train(&self) -> Option<&Arc<Matrix>> {
        let Learned::OneVsAll(scorers) = &self.learned else { return None };
        let mut train = None;
        for sc in scorers {
            match sc {
                BinaryScorer::Svm(m) if matches!(m.kernel, Kernel::Rbf { .. }) => {
                    if train.is_some_and(|t| !Arc::ptr_eq(t, m.train())) {
                        return None;
                    }
                    train = Some(m.train());
                }
                _ => return None,
            }
        }
        train
    }
}

pub fn predict(model: &FittedModel, x: &Matrix) -> Result<Vec<usize>> {
    model.predict(x)
}

/// A validated training set with caches shared by every model fitted on it.
pub struct TrainingSet {
    x: Arc<Matrix>,
    y: Vec<usize>,
    classes: usize,
    columns: OnceCell<Columns>,
    kernel: OnceCell<KernelCache>,
}

impl TrainingSet {
    /// Labels must cover every class `0..=max(y)`, with at least two classes.
    pub fn new(x: Arc<Matrix>, y: Vec<usize>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::shape(format!("{} rows but {} labels", x.rows(), y.len())));
        }
        if let Some(v) = x.as_slice().iter().find(|v| !v.is_finite()) {
            return Err(Error::range(format!("non-finite feature value {v}")));
        }
        let classes = y.iter().max().map_or(0, |m| m + 1);
        if classes < 2 {
            return Err(Error::invalid("training labels contain fewer than two classes"));
        }
        let mut seen = vec![false; classes];
        y.iter().for_each(|&c| seen[c] = true);
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!(
                "class {missing} is absent from the training labels (classes 0..{classes})"
            )));
        }
        Ok(TrainingSet {
            x,
            y,
            classes,
            columns: OnceCell::new(),
            kernel: OnceCell::new(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &Matrix {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn columns(&self) -> &Columns {
        self.columns.get_or_init(|| Columns::new(&self.x))
    }

    fn kernel(&self) -> &KernelCache {
        self.kernel.get_or_init(|| KernelCache::new(Arc::clone(&self.x)))
    }

    /// Native multiclass fit for GNB, KNC and RFC; one-vs-all otherwise.
    pub fn fit(&self, params: &HyperParams, seed: u64) -> Result<FittedModel> {
        params.validate()?;
        let learned = match *params {
            HyperParams::Gnb { var_smoothing } => {
                Learned::Gnb(bayes::fit(&self.x, &self.y, self.classes, var_smoothing))
            }
            HyperParams::Knc { k } => Learned::Knc(self.knn(k, self.y.clone(), self.classes)),
            HyperParams::Rfc { trees, depth } => {
                Learned::Rfc(forest::fit(self.columns(), &self.y, self.classes, trees, depth, seed))
            }
            _ => return self.ova_fit(params, seed),
        };
        Ok(self.wrap(params, learned))
    }

    /// One binary scorer per class, positive for that class.
    pub fn ova_fit(&self, params: &HyperParams, seed: u64) -> Result<FittedModel> {
        params.validate()?;
        let positives: Vec<usize> = if self.classes == 2 { vec![1] } else { (0..self.classes).collect() };
        let scorers = positives
            .into_iter()
            .map(|class| {
                let y: Vec<bool> = self.y.iter().map(|&c| c == class).collect();
                self.fit_binary(params, &y, mix_seed(&[seed, class as u64]))
            })
            .collect();
        Ok(self.wrap(params, Learned::OneVsAll(scorers)))
    }

    fn wrap(&self, params: &HyperParams, learned: Learned) -> FittedModel {
        FittedModel {
            kind: params.kind(),
            params: *params,
            classes: self.classes,
            features: self.x.cols(),
            learned,
        }
    }

    fn knn(&self, k: usize, labels: Vec<usize>, classes: usize) -> KNeighbors {
        KNeighbors {
            k,
            train: Arc::clone(&self.x),
            labels,
            classes,
        }
    }

    fn fit_binary(&self, params: &HyperParams, positive: &[bool], seed: u64) -> BinaryScorer {
        let signs: Vec<f64> = positive.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
        let labels: Vec<usize> = positive.iter().map(|&p| p as usize).collect();
        match *params {
            HyperParams::Lr { c } => BinaryScorer::Lr(logistic::fit(&self.x, self.kernel().gram(), &signs, c)),
            HyperParams::SvmcL { c } => {
                let sol = solve_dual(self.kernel().gram(), &signs, c);
                BinaryScorer::Svm(SvmModel::from_dual(sol, &signs, Kernel::Linear, Arc::clone(&self.x)))
            }
            HyperParams::SvmcK { c, gamma } => {
                let sol = solve_dual(&self.kernel().rbf(gamma), &signs, c);
                BinaryScorer::Svm(SvmModel::from_dual(sol, &signs, Kernel::Rbf { gamma }, Arc::clone(&self.x)))
            }
            HyperParams::Gbc { trees, depth, shrinkage } => {
                let target: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
                BinaryScorer::Gbc(boosting::fit(self.columns(), &target, trees, depth, shrinkage, seed))
            }
            HyperParams::Gnb { var_smoothing } => BinaryScorer::Gnb(bayes::fit(&self.x, &labels, 2, var_smoothing)),
            HyperParams::Knc { k } => BinaryScorer::Knc(self.knn(k, labels, 2)),
            HyperParams::Rfc { trees, depth } => {
                BinaryScorer::Rfc(forest::fit(self.columns(), &labels, 2, trees, depth, seed))
            }
        }
    }
}

fn check_kind(kind: ModelKind, params: &HyperParams) -> Result<()> {
    if params.kind() == kind {
        Ok(())
    } else {
        Err(Error::invalid(format!("hyperparameters for {} given to {kind}", params.kind())))
    }
}

/// Fits `kind` on `(x, y)`; deterministic in `seed`.
pub fn fit(kind: ModelKind, x: &Matrix, y: &[usize], params: &HyperParams, seed: u64) -> Result<FittedModel> {
    check_kind(kind, params)?;
    TrainingSet::new(Arc::new(x.clone()), y.to_vec())?.fit(params, seed)
}

/// Forces the one-vs-all adaptation for any kind.
pub fn ova_fit(kind: ModelKind, x: &Matrix, y: &[usize], params: &HyperParams, seed: u64) -> Result<FittedModel> {
    check_kind(kind, params)?;
    TrainingSet::new(Arc::new(x.clone()), y.to_vec())?.ova_fit(params, seed)
}
