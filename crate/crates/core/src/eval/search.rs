//! Exhaustive hyperparameter search scored on the validation slice.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::metrics::f1_macro;
use super::split::SplitPlan;
use crate::error::{Error, Result};
use crate::seed::mix_seed;
use crate::shallow::{FittedModel, HyperParams, ModelKind, TrainingSet};
use crate::tensor::Matrix;

/// Validation score recorded for a grid point whose fit failed.
pub const FAILED_SCORE: f64 = -1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFailure {
    pub grid_index: usize,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub best: HyperParams,
    pub best_index: usize,
    pub val_score: f64,
    /// Validation macro-F1 of every grid point, in grid order.
    pub scores: Vec<f64>,
    pub failures: Vec<GridFailure>,
    /// The winning model, already fitted on the training slice.
    pub model: FittedModel,
}

/// Fit seed of one grid point in one shuffle.
pub fn fit_seed(base_seed: u64, grid_index: usize, shuffle_index: usize) -> u64 {
    mix_seed(&[base_seed, grid_index as u64, shuffle_index as u64])
}

/// Fits every grid point on `train`, scores macro-F1 on the validation rows
/// and keeps the first maximiser. Failed fits score [`FAILED_SCORE`].
pub fn search_prepared(
    grid: &[HyperParams],
    train: &TrainingSet,
    val_x: &Matrix,
    val_y: &[usize],
    base_seed: u64,
    shuffle_index: usize,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    let mut scores = Vec::with_capacity(grid.len());
    let mut failures = Vec::new();
    let mut best: Option<(usize, f64, FittedModel)> = None;
    for (gi, hp) in grid.iter().enumerate() {
        let outcome = train
            .fit(hp, fit_seed(base_seed, gi, shuffle_index))
            .and_then(|m| {
                let score = if val_y.is_empty() { 0.0 } else { f1_macro(val_y, &m.predict(val_x)?)? };
                Ok((m, score))
            });
        match outcome {
            Ok((model, score)) => {
                scores.push(score);
                if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
                    best = Some((gi, score, model));
                }
            }
            Err(e) => {
                scores.push(FAILED_SCORE);
                failures.push(GridFailure {
                    grid_index: gi,
                    message: e.to_string(),
                });
            }
        }
    }
    let Some((best_index, val_score, model)) = best else {
        return Err(Error::State(format!(
            "every grid point failed; first error: {}",
            failures[0].message
        )));
    };
    Ok(GridResult {
        best: grid[best_index],
        best_index,
        val_score,
        scores,
        failures,
        model,
    })
}

/// Grid search for `kind` on one split of the full feature matrix `x`.
pub fn grid_search(
    kind: ModelKind,
    grid: &[HyperParams],
    split: &SplitPlan,
    x: &Matrix,
    y: &[usize],
    base_seed: u64,
) -> Result<GridResult> {
    if let Some(hp) = grid.iter().find(|hp| hp.kind() != kind) {
        return Err(Error::invalid(format!("grid for {kind} contains {} parameters", hp.kind())));
    }
    if x.rows() != y.len() {
        return Err(Error::shape(format!("{} rows but {} labels", x.rows(), y.len())));
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| y[i]).collect::<Vec<_>>();
    let train = TrainingSet::new(Arc::new(x.select_rows(&split.train_idx)), pick(&split.train_idx))?;
    search_prepared(
        grid,
        &train,
        &x.select_rows(&split.val_idx),
        &pick(&split.val_idx),
        base_seed,
        split.shuffle_index,
    )
}
