use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::ArchSpec;
use super::loss::{argmax, softmax_cross_entropy};
use crate::conv::{
    max_pool2d_backward, max_pool2d_indexed, relu, relu_backward, ConvLayer, PoolIndices,
    ResidualBlock, ResidualTrace,
};
use crate::error::{Error, Result};
use crate::seed::mix_seed;
use crate::tensor::{dot, Tensor3};

/// Fully connected layer, `out = W x + b` with `W` stored `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn random<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut d = Self::zeros(inputs, outputs);
        let bound = (6.0 / inputs as f64).sqrt();
        for w in &mut d.weights {
            *w = rng.gen_range(-bound..bound);
        }
        d
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs, self.outputs)
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + dot(row, x))
            .collect()
    }

    /// Returns `dL/dx`; accumulates parameter gradients into `grads`.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grads: &mut Dense) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.inputs];
        for (o, &g) in grad_out.iter().enumerate() {
            grads.bias[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grads.weights[o * self.inputs..(o + 1) * self.inputs];
            for ((gw, gi), (&w, &v)) in grow.iter_mut().zip(grad_in.iter_mut()).zip(row.iter().zip(x)) {
                *gw += g * v;
                *gi += g * w;
            }
        }
        grad_in
    }

    pub fn params(&self) -> [&[f64]; 2] {
        [&self.weights, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [&mut self.weights, &mut self.bias]
    }
}

/// Residual classifier: stem conv + relu, residual blocks with optional 2x2
/// pooling, then a relu hidden layer and a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnModel {
    arch: ArchSpec,
    pub stem: ConvLayer,
    pub blocks: Vec<ResidualBlock>,
    pub hidden: Dense,
    pub output: Dense,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    input: Tensor3,
    stem_pre: Tensor3,
    blocks: Vec<(ResidualTrace, Option<PoolIndices>)>,
    features: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden_act: Vec<f64>,
    logits: Vec<f64>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

impl CnnModel {
    /// Seeded fan-in scaled uniform initialisation; biases start at zero.
    pub fn build(arch: &ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x1417]));
        let (h, w) = arch.padded_size();
        let k = arch.kernel_half;
        let stem = ConvLayer::random(arch.input_channels, arch.stem_maps, k, k, h, w, &mut rng)?;
        let mut blocks = Vec::with_capacity(arch.blocks.len());
        let mut maps = arch.stem_maps;
        for (spec, (bh, bw)) in arch.blocks.iter().zip(arch.block_plane_sizes()) {
            blocks.push(ResidualBlock::random(maps, spec.maps, k, bh, bw, &mut rng)?);
            maps = spec.maps;
        }
        let hidden = Dense::random(arch.head_inputs(), arch.dense_hidden, &mut rng);
        let output = Dense::random(arch.dense_hidden, arch.classes, &mut rng);
        Ok(CnnModel {
            arch: arch.clone(),
            stem,
            blocks,
            hidden,
            output,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    /// Same structure with every parameter zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        CnnModel {
            arch: self.arch.clone(),
            stem: self.stem.zeros_like(),
            blocks: self.blocks.iter().map(ResidualBlock::zeros_like).collect(),
            hidden: self.hidden.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    /// Parameter arrays in declaration order: stem, blocks (conv_a, conv_b,
    /// projection), hidden, output; weights before biases in each layer.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self.stem.params().to_vec();
        for b in &self.blocks {
            for l in b.layers() {
                v.extend(l.params());
            }
        }
        v.extend(self.hidden.params());
        v.extend(self.output.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        v.extend(self.stem.params_mut());
        for b in &mut self.blocks {
            for l in b.layers_mut() {
                v.extend(l.params_mut());
            }
        }
        v.extend(self.hidden.params_mut());
        v.extend(self.output.params_mut());
        v
    }

    /// Human-readable names matching [`CnnModel::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["stem.weights".to_string(), "stem.biases".to_string()];
        for (i, b) in self.blocks.iter().enumerate() {
            for layer in ["conv_a", "conv_b", "projection"].iter().take(if b.projection.is_some() { 3 } else { 2 }) {
                names.push(format!("block{i}.{layer}.weights"));
                names.push(format!("block{i}.{layer}.biases"));
            }
        }
        names.extend(["hidden.weights", "hidden.biases", "output.weights", "output.biases"].map(String::from));
        names
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub(crate) fn prepare_input(&self, image: &Tensor3) -> Result<Tensor3> {
        let a = &self.arch;
        if image.shape() != (a.input_channels, a.input_height, a.input_width) {
            return Err(Error::shape(format!(
                "model expects {}x{}x{} input, got {:?}",
                a.input_channels,
                a.input_height,
                a.input_width,
                image.shape()
            )));
        }
        let (ph, pw) = a.padded_size();
        if (ph, pw) == (a.input_height, a.input_width) {
            return Ok(image.clone());
        }
        let mut padded = Tensor3::zeros_unchecked(a.input_channels, ph, pw);
        for c in 0..a.input_channels {
            let src = image.plane(c);
            let dst = padded.plane_mut(c);
            for r in 0..a.input_height {
                dst[r * pw..r * pw + a.input_width]
                    .copy_from_slice(&src[r * a.input_width..(r + 1) * a.input_width]);
            }
        }
        Ok(padded)
    }

    /// Class scores (logits) for one image.
    pub fn forward(&self, image: &Tensor3) -> Result<Vec<f64>> {
        let x = self.prepare_input(image)?;
        let mut act = relu(&self.stem.forward(&x)?);
        for (block, spec) in self.blocks.iter().zip(&self.arch.blocks) {
            act = block.forward(&act)?;
            if spec.pool_after {
                act = max_pool2d_indexed(&act)?.0;
            }
        }
        let hidden = relu_vec(&self.hidden.forward(act.as_slice()));
        Ok(self.output.forward(&hidden))
    }

    pub fn forward_traced(&self, image: &Tensor3) -> Result<ForwardTrace> {
        let input = self.prepare_input(image)?;
        let stem_pre = self.stem.forward(&input)?;
        let mut act = relu(&stem_pre);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (block, spec) in self.blocks.iter().zip(&self.arch.blocks) {
            let (out, trace) = block.forward_traced(&act)?;
            if spec.pool_after {
                let (pooled, idx) = max_pool2d_indexed(&out)?;
                act = pooled;
                blocks.push((trace, Some(idx)));
            } else {
                act = out;
                blocks.push((trace, None));
            }
        }
        let features = act.into_vec();
        let hidden_pre = self.hidden.forward(&features);
        let hidden_act = relu_vec(&hidden_pre);
        let logits = self.output.forward(&hidden_act);
        Ok(ForwardTrace {
            input,
            stem_pre,
            blocks,
            features,
            hidden_pre,
            hidden_act,
            logits,
        })
    }

    /// Backpropagates `dL/dlogits` through a recorded pass, accumulating into `grads`.
    pub fn backward(&self, trace: &ForwardTrace, grad_logits: &[f64], grads: &mut CnnModel) -> Result<()> {
        if grad_logits.len() != self.arch.classes {
            return Err(Error::shape("logit gradient has wrong length"));
        }
        let g_hidden_act = self.output.backward(&trace.hidden_act, grad_logits, &mut grads.output);
        let g_hidden_pre: Vec<f64> = g_hidden_act
            .iter()
            .zip(&trace.hidden_pre)
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect();
        let g_features = self.hidden.backward(&trace.features, &g_hidden_pre, &mut grads.hidden);

        let (lh, lw) = {
            let (t, pool) = trace.blocks.last().expect("at least one block");
            let (_, h, w) = t.output_shape();
            if pool.is_some() {
                (h / 2, w / 2)
            } else {
                (h, w)
            }
        };
        let last_maps = self.blocks.last().map(|b| b.out_maps()).unwrap_or(0);
        let mut g = Tensor3::from_vec_unchecked(last_maps, lh, lw, g_features);
        for ((block, gblock), (t, pool)) in self
            .blocks
            .iter()
            .zip(grads.blocks.iter_mut())
            .zip(&trace.blocks)
            .rev()
        {
            if let Some(idx) = pool {
                g = max_pool2d_backward(idx, &g)?;
            }
            g = block.backward(t, &g, gblock)?;
        }
        let g_stem = relu_backward(&trace.stem_pre, &g)?;
        self.stem.backward(&trace.input, &g_stem, &mut grads.stem)?;
        Ok(())
    }

    /// Loss and gradient accumulation for one labelled image.
    pub fn loss_and_grad(&self, image: &Tensor3, label: usize, grads: &mut CnnModel) -> Result<f64> {
        let trace = self.forward_traced(image)?;
        let (loss, g) = softmax_cross_entropy(&trace.logits, label)?;
        self.backward(&trace, &g, grads)?;
        Ok(loss)
    }

    pub fn loss(&self, image: &Tensor3, label: usize) -> Result<f64> {
        let logits = self.forward(image)?;
        softmax_cross_entropy(&logits, label).map(|(l, _)| l)
    }

    pub fn predict_one(&self, image: &Tensor3) -> Result<usize> {
        self.forward(image).map(|z| argmax(&z))
    }

    /// Argmax labels; ties go to the smallest class index.
    pub fn predict(&self, images: &[Tensor3]) -> Result<Vec<usize>> {
        images.iter().map(|img| self.predict_one(img)).collect()
    }
}

fn relu_vec(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&z| z.max(0.0)).collect()
}

pub fn build_model(arch: &ArchSpec, seed: u64) -> Result<CnnModel> {
    CnnModel::build(arch, seed)
}

/// One forward/backward exchange; backward is only legal after forward.
pub struct TrainStep<'m> {
    model: &'m CnnModel,
    trace: Option<ForwardTrace>,
}

impl<'m> TrainStep<'m> {
    pub fn new(model: &'m CnnModel) -> Self {
        TrainStep { model, trace: None }
    }

    pub fn forward(&mut self, image: &Tensor3) -> Result<&[f64]> {
        let trace = self.model.forward_traced(image)?;
        Ok(self.trace.insert(trace).logits())
    }

    pub fn backward(&mut self, grad_logits: &[f64], grads: &mut CnnModel) -> Result<()> {
        let trace = self
            .trace
            .take()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        self.model.backward(&trace, grad_logits, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::arch::BlockSpec;

    fn tiny_arch() -> ArchSpec {
        ArchSpec {
            input_channels: 2,
            input_height: 6,
            input_width: 5,
            kernel_half: 1,
            stem_maps: 2,
            blocks: vec![BlockSpec {
                maps: 3,
                pool_after: true,
            }],
            dense_hidden: 4,
            classes: 3,
        }
    }

    fn image(arch: &ArchSpec, seed: u64) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = arch.input_channels * arch.input_height * arch.input_width;
        Tensor3::from_vec(
            arch.input_channels,
            arch.input_height,
            arch.input_width,
            (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn build_is_deterministic() {
        let arch = ArchSpec::desk(3, 16, 16, 3);
        let a = build_model(&arch, 42).unwrap();
        let b = build_model(&arch, 42).unwrap();
        let bytes = |m: &CnnModel| -> Vec<u64> {
            m.params().iter().flat_map(|p| p.iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bytes(&a), bytes(&b));
        assert_ne!(bytes(&a), bytes(&build_model(&arch, 43).unwrap()));
        assert_eq!(a.hidden.inputs(), 16 * 4 * 4);
    }

    #[test]
    fn rejects_single_class() {
        let arch = ArchSpec::desk(3, 16, 16, 1);
        assert!(matches!(build_model(&arch, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_head_gives_uniform_scores_and_class_zero() {
        let arch = tiny_arch();
        let mut m = build_model(&arch, 1).unwrap();
        m.output = m.output.zeros_like();
        let logits = m.forward(&image(&arch, 3)).unwrap();
        assert!(logits.iter().all(|&z| z == logits[0]));
        assert_eq!(m.predict(&[image(&arch, 4), image(&arch, 5)]).unwrap(), vec![0, 0]);
        assert!(m.predict(&[]).unwrap().is_empty());
    }

    #[test]
    fn forward_matches_layer_composition() {
        let arch = tiny_arch();
        let m = build_model(&arch, 9).unwrap();
        let x = image(&arch, 10);
        // Pad 6x5 to 6x6 by hand.
        let mut padded = Tensor3::zeros(2, 6, 6).unwrap();
        for c in 0..2 {
            for r in 0..6 {
                for s in 0..5 {
                    padded.set(c, r, s, x.get(c, r, s));
                }
            }
        }
        let a = relu(&crate::conv::conv_layer_forward(&padded, &m.stem).unwrap());
        let b = crate::conv::residual_block_forward(&a, &m.blocks[0]).unwrap();
        let p = crate::conv::max_pool2d(&b).unwrap();
        let h: Vec<f64> = m.hidden.forward(p.as_slice()).iter().map(|v| v.max(0.0)).collect();
        let want = m.output.forward(&h);
        let got = m.forward(&x).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_channel_count() {
        let arch = tiny_arch();
        let m = build_model(&arch, 1).unwrap();
        let bad = Tensor3::zeros(3, 6, 5).unwrap();
        assert!(matches!(m.forward(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let arch = tiny_arch();
        let m = build_model(&arch, 1).unwrap();
        let mut grads = m.zeros_like();
        let mut step = TrainStep::new(&m);
        assert!(matches!(step.backward(&[0.0; 3], &mut grads), Err(Error::State(_))));
        step.forward(&image(&arch, 2)).unwrap();
        step.backward(&[0.1, -0.2, 0.1], &mut grads).unwrap();
        assert!(matches!(step.backward(&[0.0; 3], &mut grads), Err(Error::State(_))));
    }

    #[test]
    fn param_names_align() {
        let m = build_model(&ArchSpec::desk(3, 16, 16, 3), 0).unwrap();
        assert_eq!(m.param_names().len(), m.params().len());
    }
}
