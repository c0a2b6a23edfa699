//! Central finite-difference verification of the analytic CNN gradient.
//!
//! Every parameter is perturbed by `+-eps` and the loss recomputed from the
//! first layer the parameter touches. The network is piecewise linear in
//! each single parameter, so a difference quotient is only meaningful when
//! both perturbed passes keep the base relu/pooling pattern; when a kink is
//! crossed the step is shrunk tenfold (at most three times) and the
//! parameter is skipped if the crossing persists.

use serde::{Deserialize, Serialize};

use super::loss::softmax_cross_entropy;
use super::model::CnnModel;
use crate::conv::{max_pool2d_indexed, relu};
use crate::error::{Error, Result};
use crate::tensor::Tensor3;

const KINK_RETRIES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    /// `|a - n|_2 / (|a|_2 + |n|_2)`, 0 when both vanish.
    pub relative_error: f64,
    /// Largest `|a_k - n_k| / (|a_k| + 1e-8)` within the tensor.
    pub max_elementwise_error: f64,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Largest per-tensor relative error.
    pub max_relative_error: f64,
    /// Largest per-parameter relative error with a 1e-8 floor.
    pub max_elementwise_error: f64,
    pub checked: usize,
    /// Parameters whose perturbation crossed a relu or pooling kink at every tried step.
    pub skipped: usize,
    pub tensors: Vec<TensorCheck>,
}

/// Stage boundaries: 0 = stem, 1..=B = blocks, B+1 = dense head.
struct Stages {
    inputs: Vec<Tensor3>,
    patterns: Vec<Vec<u64>>,
}

fn sign_words(values: &[f64], out: &mut Vec<u64>) {
    for chunk in values.chunks(64) {
        let mut w = 0u64;
        for (i, &v) in chunk.iter().enumerate() {
            if v > 0.0 {
                w |= 1 << i;
            }
        }
        out.push(w);
    }
}

impl CnnModel {
    /// Runs stages `start..` from `input`, returning logits and the
    /// activation pattern of each stage run.
    fn run_from(&self, start: usize, input: &Tensor3, keep_inputs: bool) -> Result<(Vec<f64>, Stages)> {
        let nb = self.blocks.len();
        let mut stages = Stages {
            inputs: Vec::new(),
            patterns: Vec::new(),
        };
        let mut act = input.clone();
        for stage in start..=nb {
            if keep_inputs {
                stages.inputs.push(act.clone());
            }
            let mut pattern = Vec::new();
            if stage == 0 {
                let pre = self.stem.forward(&act)?;
                sign_words(pre.as_slice(), &mut pattern);
                act = relu(&pre);
            } else {
                let block = &self.blocks[stage - 1];
                let (out, trace) = block.forward_traced(&act)?;
                sign_words(trace.pre_a_slice(), &mut pattern);
                sign_words(trace.pre_out_slice(), &mut pattern);
                act = out;
                if self.arch().blocks[stage - 1].pool_after {
                    let (p, idx) = max_pool2d_indexed(&act)?;
                    pattern.extend(idx.argmax().iter().map(|&i| i as u64));
                    act = p;
                }
            }
            stages.patterns.push(pattern);
        }
        if keep_inputs {
            stages.inputs.push(act.clone());
        }
        let hidden_pre = self.hidden.forward(act.as_slice());
        let mut pattern = Vec::new();
        sign_words(&hidden_pre, &mut pattern);
        stages.patterns.push(pattern);
        let hidden: Vec<f64> = hidden_pre.iter().map(|v| v.max(0.0)).collect();
        Ok((self.output.forward(&hidden), stages))
    }
}

/// Which stage each parameter tensor belongs to, in `params()` order.
fn tensor_stages(model: &CnnModel) -> Vec<usize> {
    let mut v = vec![0, 0];
    for (i, b) in model.blocks.iter().enumerate() {
        let layers = if b.projection.is_some() { 3 } else { 2 };
        v.extend(std::iter::repeat_n(i + 1, 2 * layers));
    }
    v.extend([model.blocks.len() + 1; 4]);
    v
}

fn set_param(model: &mut CnnModel, tensor: usize, index: usize, value: f64) {
    model.params_mut()[tensor][index] = value;
}

/// Compares the analytic gradient of the sample loss with central
/// differences for every parameter.
pub fn grad_check(model: &CnnModel, image: &Tensor3, label: usize, epsilon: f64) -> Result<GradCheckReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let mut analytic = model.zeros_like();
    model.loss_and_grad(image, label, &mut analytic)?;
    let analytic: Vec<Vec<f64>> = analytic.params().iter().map(|p| p.to_vec()).collect();

    let input = model.prepare_input(image)?;
    let (_, base) = model.run_from(0, &input, true)?;
    let stage_of = tensor_stages(model);
    let names = model.param_names();
    let mut probe = model.clone();

    let loss_at = |m: &CnnModel, stage: usize| -> Result<(f64, Vec<Vec<u64>>)> {
        let (logits, st) = m.run_from_stage(stage, &base.inputs)?;
        Ok((softmax_cross_entropy(&logits, label)?.0, st))
    };

    let mut tensors = Vec::with_capacity(analytic.len());
    for (t, grad) in analytic.iter().enumerate() {
        let stage = stage_of[t];
        let base_patterns = &base.patterns[stage..];
        let mut diff_sq = 0.0;
        let mut a_sq = 0.0;
        let mut n_sq = 0.0;
        let mut worst = 0.0f64;
        let mut skipped = 0;
        for (k, &a) in grad.iter().enumerate() {
            let original = model.params()[t][k];
            let mut eps = epsilon;
            let mut numeric = None;
            for _ in 0..=KINK_RETRIES {
                set_param(&mut probe, t, k, original + eps);
                let (lp, pp) = loss_at(&probe, stage)?;
                set_param(&mut probe, t, k, original - eps);
                let (lm, pm) = loss_at(&probe, stage)?;
                set_param(&mut probe, t, k, original);
                if pp == base_patterns && pm == base_patterns {
                    numeric = Some((lp - lm) / (2.0 * eps));
                    break;
                }
                eps /= 10.0;
            }
            let Some(n) = numeric else {
                skipped += 1;
                continue;
            };
            diff_sq += (a - n) * (a - n);
            a_sq += a * a;
            n_sq += n * n;
            worst = worst.max((a - n).abs() / (a.abs() + 1e-8));
        }
        let denom = a_sq.sqrt() + n_sq.sqrt();
        tensors.push(TensorCheck {
            name: names[t].clone(),
            len: grad.len(),
            relative_error: if denom == 0.0 { 0.0 } else { diff_sq.sqrt() / denom },
            max_elementwise_error: worst,
            skipped,
        });
    }
    let skipped: usize = tensors.iter().map(|t| t.skipped).sum();
    let total: usize = tensors.iter().map(|t| t.len).sum();
    Ok(GradCheckReport {
        max_relative_error: tensors.iter().map(|t| t.relative_error).fold(0.0, f64::max),
        max_elementwise_error: tensors.iter().map(|t| t.max_elementwise_error).fold(0.0, f64::max),
        checked: total - skipped,
        skipped,
        tensors,
    })
}

impl CnnModel {
    fn run_from_stage(&self, stage: usize, inputs: &[Tensor3]) -> Result<(Vec<f64>, Vec<Vec<u64>>)> {
        let nb = self.blocks.len();
        if stage <= nb {
            let (logits, st) = self.run_from(stage, &inputs[stage], false)?;
            Ok((logits, st.patterns))
        } else {
            let hidden_pre = self.hidden.forward(inputs[stage].as_slice());
            let mut pattern = Vec::new();
            sign_words(&hidden_pre, &mut pattern);
            let hidden: Vec<f64> = hidden_pre.iter().map(|v| v.max(0.0)).collect();
            Ok((self.output.forward(&hidden), vec![pattern]))
        }
    }
}
