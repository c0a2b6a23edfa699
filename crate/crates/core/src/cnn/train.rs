use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::CnnModel;
use crate::error::{Error, Result};
use crate::eval::metrics::f1_macro;
use crate::seed::mix_seed;
use crate::tensor::Tensor3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// L2 penalty `l2/2 * |theta|^2` on every parameter.
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.005,
            momentum: 0.9,
            epochs: 25,
            batch_size: 16,
            seed: 0,
            l2: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::invalid("l2 must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Images paired with class labels.
#[derive(Clone, Copy, Debug)]
pub struct Labeled<'a> {
    pub images: &'a [Tensor3],
    pub labels: &'a [usize],
}

impl<'a> Labeled<'a> {
    pub fn new(images: &'a [Tensor3], labels: &'a [usize]) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(Labeled { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss; epoch 0 is a full pass before any update.
    pub train_loss: f64,
    pub val_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

pub fn mean_loss(model: &CnnModel, data: Labeled<'_>) -> Result<f64> {
    let mut total = 0.0;
    for (img, &y) in data.images.iter().zip(data.labels) {
        total += model.loss(img, y)?;
    }
    Ok(total / data.len() as f64)
}

fn val_f1(model: &CnnModel, val: Labeled<'_>) -> Result<f64> {
    let pred = model.predict(val.images)?;
    f1_macro(val.labels, &pred)
}

/// Mini-batch SGD with momentum and L2 decay.
///
/// Returns the parameters from the epoch with the highest validation
/// macro-F1 (earliest epoch on ties) together with the per-epoch history.
pub fn train(
    model: &CnnModel,
    train_set: Labeled<'_>,
    val_set: Labeled<'_>,
    cfg: &TrainConfig,
) -> Result<(CnnModel, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    if let Some(&bad) = train_set
        .labels
        .iter()
        .chain(val_set.labels)
        .find(|&&y| y >= model.classes())
    {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {} classes",
            model.classes()
        )));
    }

    let mut model = model.clone();
    let mut velocity = model.zeros_like();
    let mut grads = model.zeros_like();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0x5348_5546]));

    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: mean_loss(&model, train_set)?,
        val_f1: val_f1(&model, val_set)?,
    }];
    let mut best: Option<(f64, usize, CnnModel)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            zero_params(&mut grads);
            for &i in batch {
                loss_sum += model.loss_and_grad(&train_set.images[i], train_set.labels[i], &mut grads)?;
            }
            let scale = 1.0 / batch.len() as f64;
            sgd_update(&mut model, &mut velocity, &grads, scale, cfg);
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_f1: val_f1(&model, val_set)?,
        };
        if !record.train_loss.is_finite() {
            return Err(Error::State(format!("training diverged at epoch {epoch}")));
        }
        if best.as_ref().is_none_or(|(f, _, _)| record.val_f1 > *f) {
            best = Some((record.val_f1, epoch, model.clone()));
        }
        history.push(record);
    }

    let (best_model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, 0),
    };
    Ok((
        best_model,
        TrainHistory {
            epochs: history,
            best_epoch,
        },
    ))
}

fn zero_params(m: &mut CnnModel) {
    for p in m.params_mut() {
        p.fill(0.0);
    }
}

fn sgd_update(model: &mut CnnModel, velocity: &mut CnnModel, grads: &CnnModel, scale: f64, cfg: &TrainConfig) {
    let grads = grads.params();
    for ((p, v), g) in model.params_mut().into_iter().zip(velocity.params_mut()).zip(grads) {
        for ((pi, vi), &gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            let step = gi * scale + cfg.l2 * *pi;
            *vi = cfg.momentum * *vi - cfg.learning_rate * step;
            *pi += *vi;
        }
    }
}

/// Applies one plain gradient step on a single sample (no momentum, no decay).
pub fn sgd_step_single(model: &mut CnnModel, image: &Tensor3, label: usize, learning_rate: f64) -> Result<()> {
    let mut grads = model.zeros_like();
    model.loss_and_grad(image, label, &mut grads)?;
    let g = grads.params();
    for (p, gp) in model.params_mut().into_iter().zip(g) {
        for (pi, gi) in p.iter_mut().zip(gp) {
            *pi -= learning_rate * gi;
        }
    }
    Ok(())
}

pub fn predict(model: &CnnModel, images: &[Tensor3]) -> Result<Vec<usize>> {
    model.predict(images)
}
