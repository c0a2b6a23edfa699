//! Per-class and averaged F1 scores.
//!
//! Precision or recall of the form 0/0 counts as 0, and a class's F1 with
//! `P + R = 0` is 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Unweighted mean over classes present in `y_true`.
    #[default]
    Macro,
    /// F1 of pooled counts over classes present in `y_true`.
    Micro,
    /// Mean weighted by support in `y_true`.
    Weighted,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassCounts {
    pub fn f1(&self) -> f64 {
        f1_from_counts(self.tp, self.fp, self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check(y_true: &[usize], y_pred: &[usize]) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::shape(format!(
            "y_true has {} entries, y_pred has {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::invalid("F1 needs at least one sample"));
    }
    Ok(())
}

/// Counts for every class index up to the largest label seen.
pub fn class_counts(y_true: &[usize], y_pred: &[usize]) -> Result<Vec<ClassCounts>> {
    check(y_true, y_pred)?;
    let k = y_true.iter().chain(y_pred).max().map_or(0, |m| m + 1);
    let mut counts = vec![ClassCounts::default(); k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t == p {
            counts[t].tp += 1;
        } else {
            counts[p].fp += 1;
            counts[t].fn_ += 1;
        }
    }
    Ok(counts)
}

pub fn f1_per_class(y_true: &[usize], y_pred: &[usize], class: usize) -> Result<f64> {
    let counts = class_counts(y_true, y_pred)?;
    Ok(counts.get(class).map_or(0.0, ClassCounts::f1))
}

pub fn f1_score(y_true: &[usize], y_pred: &[usize], averaging: Averaging) -> Result<f64> {
    let counts = class_counts(y_true, y_pred)?;
    let present: Vec<(usize, &ClassCounts)> = counts
        .iter()
        .enumerate()
        .filter(|(_, c)| c.tp + c.fn_ > 0)
        .collect();
    Ok(match averaging {
        Averaging::Macro => present.iter().map(|(_, c)| c.f1()).sum::<f64>() / present.len() as f64,
        Averaging::Micro => {
            let (tp, fp, fn_) = present
                .iter()
                .fold((0, 0, 0), |(a, b, c), (_, k)| (a + k.tp, b + k.fp, c + k.fn_));
            f1_from_counts(tp, fp, fn_)
        }
        Averaging::Weighted => {
            present
                .iter()
                .map(|(_, c)| c.f1() * (c.tp + c.fn_) as f64)
                .sum::<f64>()
                / y_true.len() as f64
        }
    })
}

pub fn f1_macro(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    f1_score(y_true, y_pred, Averaging::Macro)
}
