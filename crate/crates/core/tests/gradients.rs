//! Finite-difference checks for every backward pass.
//!
//! Ops are reduced to a scalar with a fixed random projection
//! `L = sum(R * op(x))`, so the upstream gradient is `R`.

use qlf::cnn::{build_model, grad_check, softmax_cross_entropy, ArchSpec, BlockSpec, CnnModel};
use qlf::conv::{
    convolve2d, convolve2d_backward, max_pool2d, max_pool2d_indexed, max_pool2d_backward, relu,
    relu_backward, ConvLayer, Filter, Padding, ResidualBlock,
};
use qlf::Tensor3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor3 {
    Tensor3::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn project(y: &Tensor3, r: &Tensor3) -> f64 {
    y.as_slice().iter().zip(r.as_slice()).map(|(a, b)| a * b).sum()
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + 1e-8)
}

/// Central difference of `f` along every coordinate of `x`.
fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + EPS;
            let up = f(&probe);
            probe[k] = x[k] - EPS;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * EPS)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
    let worst = analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel(a, n))
        .fold(0.0, f64::max);
    assert!(worst < TOL, "{what}: max relative error {worst:e}");
}

#[test]
fn convolve2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..20 {
        let (h, w) = (rng.gen_range(3..=7), rng.gen_range(3..=7));
        let x = rand_tensor(&mut rng, 1, h, w);
        let kw: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k = Filter::new(1, 1, kw.clone()).unwrap();
        let r = rand_tensor(&mut rng, 1, h, w);
        let (gx, gk) = convolve2d_backward(&x, &k, &r).unwrap();

        let nx = numeric_grad(x.as_slice(), |v| {
            let t = Tensor3::from_vec(1, h, w, v.to_vec()).unwrap();
            project(&convolve2d(&t, &k, Padding::Zero).unwrap(), &r)
        });
        assert_close(gx.as_slice(), &nx, "convolve2d input");
        let nk = numeric_grad(&kw, |v| {
            let f = Filter::new(1, 1, v.to_vec()).unwrap();
            project(&convolve2d(&x, &f, Padding::Zero).unwrap(), &r)
        });
        assert_close(gk.weights(), &nk, "convolve2d filter");
    }
}

#[test]
fn filter_gradient_on_5x5_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, 1, 5, 5);
    let kw: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let k = Filter::new(1, 1, kw.clone()).unwrap();
    let r = rand_tensor(&mut rng, 1, 5, 5);
    let (_, gk) = convolve2d_backward(&x, &k, &r).unwrap();
    let nk = numeric_grad(&kw, |v| {
        project(&convolve2d(&x, &Filter::new(1, 1, v.to_vec()).unwrap(), Padding::Zero).unwrap(), &r)
    });
    for (a, n) in gk.weights().iter().zip(&nk) {
        assert!((a - n).abs() / a.abs().max(1e-300) < 1e-6);
    }
}

#[test]
fn conv_layer_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for _ in 0..20 {
        let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let (h, w) = (rng.gen_range(2..=6), rng.gen_range(2..=6));
        let layer = ConvLayer::random(cin, cout, 1, 1, h, w, &mut rng).unwrap();
        let mut layer = layer;
        for b in layer.biases_mut() {
            *b = rng.gen_range(-0.5..0.5);
        }
        let x = rand_tensor(&mut rng, cin, h, w);
        let r = rand_tensor(&mut rng, cout, h, w);
        let mut grads = layer.zeros_like();
        let gx = layer.backward(&x, &r, &mut grads).unwrap();

        let nx = numeric_grad(x.as_slice(), |v| {
            project(&layer.forward(&Tensor3::from_vec(cin, h, w, v.to_vec()).unwrap()).unwrap(), &r)
        });
        assert_close(gx.as_slice(), &nx, "conv layer input");
        let nw = numeric_grad(layer.weights(), |v| {
            let mut l = layer.clone();
            l.weights_mut().copy_from_slice(v);
            project(&l.forward(&x).unwrap(), &r)
        });
        assert_close(grads.weights(), &nw, "conv layer weights");
        let nb = numeric_grad(layer.biases(), |v| {
            let mut l = layer.clone();
            l.biases_mut().copy_from_slice(v);
            project(&l.forward(&x).unwrap(), &r)
        });
        assert_close(grads.biases(), &nb, "conv layer biases");
    }
}

#[test]
fn relu_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    for _ in 0..20 {
        // Keep inputs away from the kink so +-eps stays on one side.
        let x = rand_tensor(&mut rng, 2, 4, 4).map(|v| if v.abs() < 1e-3 { 0.5 } else { v });
        let r = rand_tensor(&mut rng, 2, 4, 4);
        let g = relu_backward(&x, &r).unwrap();
        let n = numeric_grad(x.as_slice(), |v| {
            project(&relu(&Tensor3::from_vec(2, 4, 4, v.to_vec()).unwrap()), &r)
        });
        assert_close(g.as_slice(), &n, "relu");
    }
}

#[test]
fn pool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    for _ in 0..20 {
        let x = rand_tensor(&mut rng, 2, 4, 6);
        let (y, idx) = max_pool2d_indexed(&x).unwrap();
        let r = rand_tensor(&mut rng, y.channels(), y.height(), y.width());
        let g = max_pool2d_backward(&idx, &r).unwrap();
        let n = numeric_grad(x.as_slice(), |v| {
            project(&max_pool2d(&Tensor3::from_vec(2, 4, 6, v.to_vec()).unwrap()).unwrap(), &r)
        });
        assert_close(g.as_slice(), &n, "max pool");
    }
}

#[test]
fn residual_block_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut checked = 0;
    while checked < 20 {
        let (cin, maps) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let block = ResidualBlock::random(cin, maps, 1, 4, 5, &mut rng).unwrap();
        let x = rand_tensor(&mut rng, cin, 4, 5);
        let (y, trace) = block.forward_traced(&x).unwrap();
        let r = rand_tensor(&mut rng, y.channels(), 4, 5);
        let mut grads = block.zeros_like();
        let gx = block.backward(&trace, &r, &mut grads).unwrap();

        // Skip instances where a relu input sits within reach of +-eps.
        let pre_near_kink = |b: &ResidualBlock, x: &Tensor3| {
            let a = b.conv_a.forward(x).unwrap();
            let mut z = b.conv_b.forward(&relu(&a)).unwrap();
            let sc = match &b.projection {
                Some(p) => p.forward(x).unwrap(),
                None => x.clone(),
            };
            z.add_assign(&sc).unwrap();
            a.as_slice().iter().chain(z.as_slice()).any(|v| v.abs() < 1e-3)
        };
        if pre_near_kink(&block, &x) {
            continue;
        }
        checked += 1;

        let nx = numeric_grad(x.as_slice(), |v| {
            project(&block.forward(&Tensor3::from_vec(cin, 4, 5, v.to_vec()).unwrap()).unwrap(), &r)
        });
        assert_close(gx.as_slice(), &nx, "residual input");

        let layer_count = block.layers().count();
        let grad_layers: Vec<&ConvLayer> = grads.layers().collect();
        for li in 0..layer_count {
            let base: Vec<&ConvLayer> = block.layers().collect();
            let nw = numeric_grad(base[li].weights(), |v| {
                let mut b = block.clone();
                b.layers_mut().nth(li).unwrap().weights_mut().copy_from_slice(v);
                project(&b.forward(&x).unwrap(), &r)
            });
            assert_close(grad_layers[li].weights(), &nw, "residual weights");
            let nb = numeric_grad(base[li].biases(), |v| {
                let mut b = block.clone();
                b.layers_mut().nth(li).unwrap().biases_mut().copy_from_slice(v);
                project(&b.forward(&x).unwrap(), &r)
            });
            assert_close(grad_layers[li].biases(), &nb, "residual biases");
        }
    }
}

fn tiny_arch() -> ArchSpec {
    ArchSpec {
        input_channels: 1,
        input_height: 6,
        input_width: 6,
        kernel_half: 1,
        stem_maps: 2,
        blocks: vec![BlockSpec {
            maps: 2,
            pool_after: true,
        }],
        dense_hidden: 4,
        classes: 3,
    }
}

fn rand_image(rng: &mut ChaCha8Rng, arch: &ArchSpec) -> Tensor3 {
    let (c, h, w) = (arch.input_channels, arch.input_height, arch.input_width);
    Tensor3::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn tiny_model_grad_check() {
    let arch = tiny_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let model = build_model(&arch, 1).unwrap();
    let x = rand_image(&mut rng, &arch);
    let report = grad_check(&model, &x, 1, 1e-5).unwrap();
    assert!(report.max_relative_error < 1e-5, "{report:?}");
    assert!(report.max_relative_error.is_finite());
    let again = grad_check(&model, &x, 1, 1e-5).unwrap();
    assert_eq!(report, again);
}

#[test]
fn small_step_decreases_sample_loss() {
    let arch = tiny_arch();
    let mut failures = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let model = build_model(&arch, seed).unwrap();
        let x = rand_image(&mut rng, &arch);
        let y = rng.gen_range(0..arch.classes);
        let before = model.loss(&x, y).unwrap();
        let decreased = |lr: f64| {
            let mut m: CnnModel = model.clone();
            qlf::cnn::train::sgd_step_single(&mut m, &x, y, lr).unwrap();
            m.loss(&x, y).unwrap() < before
        };
        if !decreased(1e-4) && !decreased(1e-5) {
            failures += 1;
        }
    }
    assert_eq!(failures, 0);
}

#[test]
fn analytic_logit_gradient_matches_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    for _ in 0..20 {
        let z: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (_, g) = softmax_cross_entropy(&z, 2).unwrap();
        let n = numeric_grad(&z, |v| softmax_cross_entropy(v, 2).unwrap().0);
        assert_close(&g, &n, "softmax cross entropy");
    }
}
