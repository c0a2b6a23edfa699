//! Discrete convolution, convolutional layers and residual blocks.
//!
//! Sign convention: `out(r, s) = sum_{u,v} K(u, v) * I(r + u, s + v)` with
//! `u in -h1..=h1`, `v in -h2..=h2`. Inputs outside the plane read as zero
//! and outputs keep the input's height and width.
//!
//! Every forward op has a matching backward that returns the input gradient
//! and accumulates parameter gradients into a zero-initialised twin of the
//! layer (see [`ConvLayer::zeros_like`]).

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Border policy for [`convolve2d`]. Only zero padding is supported.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Padding {
    #[default]
    Zero,
}

/// A `(2*h1 + 1) x (2*h2 + 1)` filter; weight `(u, v)` lives at row `u + h1`,
/// column `v + h2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Filter {
    half_height: usize,
    half_width: usize,
    weights: Vec<f64>,
}

impl Filter {
    pub fn new(half_height: usize, half_width: usize, weights: Vec<f64>) -> Result<Self> {
        let n = (2 * half_height + 1) * (2 * half_width + 1);
        if weights.len() != n {
            return Err(Error::shape(format!(
                "filter with half sizes ({half_height}, {half_width}) needs {n} weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::range("filter weights must be finite"));
        }
        Ok(Filter {
            half_height,
            half_width,
            weights,
        })
    }

    /// Builds a filter from its rows; side lengths must be odd.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let kh = rows.len();
        let kw = rows.first().map(|r| r.len()).unwrap_or(0);
        if kh.is_multiple_of(2) || kw.is_multiple_of(2) || rows.iter().any(|r| r.len() != kw) {
            return Err(Error::shape("filter rows must form an odd-sided rectangle"));
        }
        Filter::new(kh / 2, kw / 2, rows.iter().flat_map(|r| r.iter().copied()).collect())
    }

    pub fn identity() -> Self {
        Filter {
            half_height: 0,
            half_width: 0,
            weights: vec![1.0],
        }
    }

    pub fn half_height(&self) -> usize {
        self.half_height
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(u, v)`.
    pub fn at(&self, u: isize, v: isize) -> f64 {
        let kw = 2 * self.half_width + 1;
        let row = (u + self.half_height as isize) as usize;
        let col = (v + self.half_width as isize) as usize;
        self.weights[row * kw + col]
    }
}

/// Zeroed temporary buffer recycled through a per-thread pool. Large
/// short-lived vectors otherwise go back to the OS on free and page-fault on
/// every layer call.
struct Scratch(Vec<f64>);

thread_local! {
    static SCRATCH_POOL: std::cell::RefCell<Vec<Vec<f64>>> = const { std::cell::RefCell::new(Vec::new()) };
}

impl Scratch {
    fn zeroed(len: usize) -> Self {
        let mut v = SCRATCH_POOL.with(|p| p.borrow_mut().pop()).unwrap_or_default();
        v.clear();
        v.resize(len, 0.0);
        Scratch(v)
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let v = std::mem::take(&mut self.0);
        SCRATCH_POOL.with(|p| {
            let mut p = p.borrow_mut();
            if p.len() < 16 {
                p.push(v);
            }
        });
    }
}

impl std::ops::Deref for Scratch {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::DerefMut for Scratch {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Planes copied into a zero border of `h1` rows and `h2` columns, stored with
/// row stride `width + 2*h2` plus `2*h2 + LANES` slack values so every filter
/// tap is a single contiguous slice of length `height * stride`, readable in
/// whole vectors.
struct Padded {
    data: Scratch,
    stride: usize,
    plane: usize,
}

impl Padded {
    fn new(planes: usize, height: usize, width: usize, h1: usize, h2: usize) -> Self {
        let stride = width + 2 * h2;
        let plane = (height + 2 * h1) * stride + 2 * h2 + LANES;
        Padded {
            data: Scratch::zeroed(planes * plane),
            stride,
            plane,
        }
    }

    fn from_planes(src: &[f64], planes: usize, height: usize, width: usize, h1: usize, h2: usize) -> Self {
        let mut p = Self::new(planes, height, width, h1, h2);
        for c in 0..planes {
            let from = &src[c * height * width..(c + 1) * height * width];
            let to = &mut p.data[c * p.plane..(c + 1) * p.plane];
            for (r, row) in from.chunks_exact(width).enumerate() {
                let off = (r + h1) * p.stride + h2;
                to[off..off + width].copy_from_slice(row);
            }
        }
        p
    }

    fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.plane..(c + 1) * self.plane]
    }

}

/// Output positions per register tile.
const LANES: usize = 16;
/// Output maps per register tile; each input load feeds this many FMAs.
const OUTS: usize = 4;

/// Correlates padded input planes with a `[out][in][kh][kw]` kernel bank,
/// writing `out_maps` strided planes of `out_len` values into `out`.
#[allow(clippy::too_many_arguments)]
fn correlate_bank(
    input: &Padded,
    in_maps: usize,
    out_maps: usize,
    kernel: &[f64],
    kh: usize,
    kw: usize,
    out_len: usize,
    out: &mut [f64],
) {
    let taps = kh * kw;
    let groups = out_maps.div_ceil(OUTS);
    // [group][in][tap][OUTS], zero-filled past the last map.
    let mut packed = vec![0.0; groups * in_maps * taps * OUTS];
    for i in 0..out_maps {
        let (g, o) = (i / OUTS, i % OUTS);
        for j in 0..in_maps {
            for t in 0..taps {
                packed[((g * in_maps + j) * taps + t) * OUTS + o] = kernel[(i * in_maps + j) * taps + t];
            }
        }
    }
    for g in 0..groups {
        let kg = &packed[g * in_maps * taps * OUTS..(g + 1) * in_maps * taps * OUTS];
        let live = OUTS.min(out_maps - g * OUTS);
        for q0 in (0..out_len).step_by(LANES) {
            let acc = bank_tile(input, in_maps, kg, kh, kw, q0);
            let len = LANES.min(out_len - q0);
            for (o, a) in acc.iter().enumerate().take(live) {
                let base = (g * OUTS + o) * out_len + q0;
                out[base..base + len].copy_from_slice(&a[..len]);
            }
        }
    }
}

/// One `OUTS x LANES` output tile starting at strided position `q0`.
#[inline(never)]
fn bank_tile(input: &Padded, in_maps: usize, kg: &[f64], kh: usize, kw: usize, q0: usize) -> [[f64; LANES]; OUTS] {
    let taps = kh * kw;
    let stride = input.stride;
    let mut acc = [[0.0f64; LANES]; OUTS];
    for j in 0..in_maps {
        let plane = input.plane(j);
        let kj = &kg[j * taps * OUTS..(j + 1) * taps * OUTS];
        for ku in 0..kh {
            for kv in 0..kw {
                let off = ku * stride + kv + q0;
                let xs: &[f64; LANES] = plane[off..off + LANES].try_into().unwrap();
                let t = ku * kw + kv;
                let ks: &[f64; OUTS] = kj[t * OUTS..(t + 1) * OUTS].try_into().unwrap();
                simd::tile_update(&mut acc, ks, xs);
            }
        }
    }
    acc
}

/// Register-tile primitives. With AVX2+FMA enabled at compile time these use
/// explicit vectors; otherwise plain loops.
mod simd {
    use super::{LANES, OUTS};

    #[cfg(all(target_arch = "x86_64", target_feature = "avx2", target_feature = "fma"))]
    #[inline(always)]
    pub(super) fn tile_update(acc: &mut [[f64; LANES]; OUTS], ks: &[f64; OUTS], xs: &[f64; LANES]) {
        use std::arch::x86_64::*;
        // SAFETY: the target features are guaranteed by the cfg gate and all
        // pointers come from fixed-size arrays of the loaded width.
        unsafe {
            let mut x = [_mm256_setzero_pd(); LANES / 4];
            for (h, v) in x.iter_mut().enumerate() {
                *v = _mm256_loadu_pd(xs.as_ptr().add(4 * h));
            }
            for o in 0..OUTS {
                let k = _mm256_set1_pd(ks[o]);
                let p = acc[o].as_mut_ptr();
                for (h, &v) in x.iter().enumerate() {
                    let q = p.add(4 * h);
                    _mm256_storeu_pd(q, _mm256_fmadd_pd(k, v, _mm256_loadu_pd(q)));
                }
            }
        }
    }

    #[cfg(not(all(target_arch = "x86_64", target_feature = "avx2", target_feature = "fma")))]
    #[inline(always)]
    pub(super) fn tile_update(acc: &mut [[f64; LANES]; OUTS], ks: &[f64; OUTS], xs: &[f64; LANES]) {
        for o in 0..OUTS {
            for l in 0..LANES {
                acc[o][l] += ks[o] * xs[l];
            }
        }
    }

    #[cfg(all(target_arch = "x86_64", target_feature = "avx2", target_feature = "fma"))]
    #[inline(always)]
    pub(super) fn mul_acc(acc: &mut [f64; LANES], gs: &[f64; LANES], xs: &[f64]) {
        use std::arch::x86_64::*;
        assert!(xs.len() >= LANES);
        // SAFETY: as above; `xs` holds at least LANES values.
        unsafe {
            let p = acc.as_mut_ptr();
            for h in (0..LANES).step_by(4) {
                let g = _mm256_loadu_pd(gs.as_ptr().add(h));
                let x = _mm256_loadu_pd(xs.as_ptr().add(h));
                _mm256_storeu_pd(p.add(h), _mm256_fmadd_pd(g, x, _mm256_loadu_pd(p.add(h))));
            }
        }
    }

    #[cfg(not(all(target_arch = "x86_64", target_feature = "avx2", target_feature = "fma")))]
    #[inline(always)]
    pub(super) fn mul_acc(acc: &mut [f64; LANES], gs: &[f64; LANES], xs: &[f64]) {
        for l in 0..LANES {
            acc[l] += gs[l] * xs[l];
        }
    }
}

/// `[out][in][u][v]` -> `[in][out][-u][-v]`: the bank whose correlation with
/// the upstream gradient yields the input gradient.
fn transpose_flip(kernel: &[f64], in_maps: usize, out_maps: usize, kh: usize, kw: usize) -> Vec<f64> {
    let taps = kh * kw;
    let mut t = vec![0.0; kernel.len()];
    for i in 0..out_maps {
        for j in 0..in_maps {
            let src = &kernel[(i * in_maps + j) * taps..(i * in_maps + j + 1) * taps];
            let dst = &mut t[(j * out_maps + i) * taps..(j * out_maps + i + 1) * taps];
            for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                *d = *s;
            }
        }
    }
    t
}

/// Accumulates `dL/dK_ij(u, v) = sum_{r,s} g_i(r, s) * X_j(r + u, s + v)` for the
/// whole bank; `grads` are strided upstream planes with zero tail columns,
/// each followed by at least `LANES` zeros of slack.
#[allow(clippy::too_many_arguments)]
fn kernel_grads(
    input: &Padded,
    grads: &[f64],
    grad_plane: usize,
    in_maps: usize,
    out_maps: usize,
    kh: usize,
    kw: usize,
    out_len: usize,
    grad_kernel: &mut [f64],
) {
    const TILE: usize = 3;
    let taps = kh * kw;
    let stride = input.stride;
    for i in 0..out_maps {
        let g = &grads[i * grad_plane..(i + 1) * grad_plane];
        for j in 0..in_maps {
            let plane = input.plane(j);
            let gk = &mut grad_kernel[(i * in_maps + j) * taps..(i * in_maps + j + 1) * taps];
            for ku in 0..kh {
                for kv0 in (0..kw).step_by(TILE) {
                    let width = TILE.min(kw - kv0);
                    let base = ku * stride + kv0;
                    let mut acc = [[0.0f64; LANES]; TILE];
                    for q0 in (0..out_len).step_by(LANES) {
                        let gs: &[f64; LANES] = g[q0..q0 + LANES].try_into().unwrap();
                        for (t, a) in acc.iter_mut().enumerate().take(width) {
                            let off = base + t + q0;
                            simd::mul_acc(a, gs, &plane[off..off + LANES]);
                        }
                    }
                    for (t, a) in acc.iter().enumerate().take(width) {
                        gk[ku * kw + kv0 + t] += a.iter().sum::<f64>();
                    }
                }
            }
        }
    }
}

/// Convolves a single-plane tensor with `filter`; output has the input's size.
pub fn convolve2d(plane: &Tensor3, filter: &Filter, padding: Padding) -> Result<Tensor3> {
    let Padding::Zero = padding;
    if plane.channels() != 1 {
        return Err(Error::shape(format!(
            "convolve2d takes one plane, got {} channels",
            plane.channels()
        )));
    }
    let layer = ConvLayer::single(filter, plane.height(), plane.width());
    layer.forward(plane)
}

/// Gradients of `convolve2d` given the upstream gradient: `(d input, d filter)`.
pub fn convolve2d_backward(
    plane: &Tensor3,
    filter: &Filter,
    grad_out: &Tensor3,
) -> Result<(Tensor3, Filter)> {
    if plane.channels() != 1 || !plane.same_shape(grad_out) {
        return Err(Error::shape("convolve2d_backward: plane and gradient shapes differ"));
    }
    let layer = ConvLayer::single(filter, plane.height(), plane.width());
    let mut grads = layer.zeros_like();
    let grad_in = layer.backward(plane, grad_out, &mut grads)?;
    Ok((
        grad_in,
        Filter {
            half_height: filter.half_height,
            half_width: filter.half_width,
            weights: grads.weights,
        },
    ))
}

/// A bank of `out_maps x in_maps` filters sharing half sizes, plus one bias
/// plane per output map.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    in_maps: usize,
    out_maps: usize,
    half_height: usize,
    half_width: usize,
    height: usize,
    width: usize,
    /// `[out][in][kh][kw]`
    weights: Vec<f64>,
    /// `[out][height][width]`
    biases: Vec<f64>,
}

impl ConvLayer {
    /// Zero-initialised layer operating on `height x width` planes.
    pub fn zeros(
        in_maps: usize,
        out_maps: usize,
        half_height: usize,
        half_width: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if in_maps == 0 || out_maps == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("conv layer dimensions must be >= 1"));
        }
        let k = (2 * half_height + 1) * (2 * half_width + 1);
        Ok(ConvLayer {
            in_maps,
            out_maps,
            half_height,
            half_width,
            height,
            width,
            weights: vec![0.0; out_maps * in_maps * k],
            biases: vec![0.0; out_maps * height * width],
        })
    }

    /// Layer with weights drawn from `U(-b, b)`, `b = sqrt(6 / fan_in)`, and zero biases.
    pub fn random<R: Rng>(
        in_maps: usize,
        out_maps: usize,
        half_height: usize,
        half_width: usize,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layer = Self::zeros(in_maps, out_maps, half_height, half_width, height, width)?;
        let fan_in = (in_maps * layer.kernel_len()) as f64;
        let bound = (6.0 / fan_in).sqrt();
        for w in &mut layer.weights {
            *w = rng.gen_range(-bound..bound);
        }
        Ok(layer)
    }

    /// Layer built from an explicit filter grid (`filters[i][j]` connects
    /// input map `j` to output map `i`) and bias planes.
    pub fn from_parts(filters: &[Vec<Filter>], biases: &[Tensor3]) -> Result<Self> {
        let out_maps = filters.len();
        let in_maps = filters.first().map(|r| r.len()).unwrap_or(0);
        let first = filters
            .first()
            .and_then(|r| r.first())
            .ok_or_else(|| Error::invalid("empty filter grid"))?;
        if biases.len() != out_maps {
            return Err(Error::shape("one bias plane per output map is required"));
        }
        let (height, width) = (biases[0].height(), biases[0].width());
        let mut layer = Self::zeros(
            in_maps,
            out_maps,
            first.half_height,
            first.half_width,
            height,
            width,
        )?;
        let k = layer.kernel_len();
        for (i, row) in filters.iter().enumerate() {
            if row.len() != in_maps {
                return Err(Error::shape("ragged filter grid"));
            }
            for (j, f) in row.iter().enumerate() {
                if f.half_height != first.half_height || f.half_width != first.half_width {
                    return Err(Error::shape("all filters in a layer must share half sizes"));
                }
                let off = (i * in_maps + j) * k;
                layer.weights[off..off + k].copy_from_slice(&f.weights);
            }
        }
        for (i, b) in biases.iter().enumerate() {
            if b.shape() != (1, height, width) {
                return Err(Error::shape("bias planes must be single planes of equal size"));
            }
            layer.biases[i * height * width..(i + 1) * height * width]
                .copy_from_slice(b.as_slice());
        }
        Ok(layer)
    }

    fn single(filter: &Filter, height: usize, width: usize) -> Self {
        ConvLayer {
            in_maps: 1,
            out_maps: 1,
            half_height: filter.half_height,
            half_width: filter.half_width,
            height,
            width,
            weights: filter.weights.clone(),
            biases: vec![0.0; height * width],
        }
    }

    pub fn zeros_like(&self) -> Self {
        ConvLayer {
            weights: vec![0.0; self.weights.len()],
            biases: vec![0.0; self.biases.len()],
            ..*self
        }
    }

    pub fn in_maps(&self) -> usize {
        self.in_maps
    }

    pub fn out_maps(&self) -> usize {
        self.out_maps
    }

    pub fn half_sizes(&self) -> (usize, usize) {
        (self.half_height, self.half_width)
    }

    pub fn plane_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn kernel_len(&self) -> usize {
        (2 * self.half_height + 1) * (2 * self.half_width + 1)
    }

    pub fn filter(&self, out_map: usize, in_map: usize) -> Filter {
        let k = self.kernel_len();
        let off = (out_map * self.in_maps + in_map) * k;
        Filter {
            half_height: self.half_height,
            half_width: self.half_width,
            weights: self.weights[off..off + k].to_vec(),
        }
    }

    pub fn bias_plane(&self, out_map: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.biases[out_map * n..(out_map + 1) * n]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    /// Parameter arrays in declaration order (weights, then biases).
    pub fn params(&self) -> [&[f64]; 2] {
        [&self.weights, &self.biases]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [&mut self.weights, &mut self.biases]
    }

    fn check_input(&self, x: &Tensor3) -> Result<()> {
        if x.channels() != self.in_maps {
            return Err(Error::shape(format!(
                "conv layer expects {} input maps, got {}",
                self.in_maps,
                x.channels()
            )));
        }
        if (x.height(), x.width()) != (self.height, self.width) {
            return Err(Error::shape(format!(
                "conv layer expects {}x{} planes, got {}x{}",
                self.height,
                self.width,
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }

    /// `Y_i = B_i + sum_j K_ij * X_j`.
    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3> {
        self.check_input(x)?;
        let (h, w) = (self.height, self.width);
        let (h1, h2) = (self.half_height, self.half_width);
        let padded = Padded::from_planes(x.as_slice(), self.in_maps, h, w, h1, h2);
        let out_len = h * padded.stride;
        let mut acc = Scratch::zeroed(self.out_maps * out_len);
        correlate_bank(
            &padded,
            self.in_maps,
            self.out_maps,
            &self.weights,
            2 * h1 + 1,
            2 * h2 + 1,
            out_len,
            &mut acc,
        );
        let mut out = self.biases.clone();
        for (src, dst) in acc.chunks_exact(padded.stride).zip(out.chunks_exact_mut(w)) {
            for (d, &v) in dst.iter_mut().zip(&src[..w]) {
                *d += v;
            }
        }
        Ok(Tensor3::from_vec_unchecked(self.out_maps, h, w, out))
    }

    /// Returns `dL/dx` and adds `dL/dK`, `dL/dB` into `grads`.
    pub fn backward(&self, x: &Tensor3, grad_out: &Tensor3, grads: &mut ConvLayer) -> Result<Tensor3> {
        self.check_input(x)?;
        if grad_out.shape() != (self.out_maps, self.height, self.width) {
            return Err(Error::shape("conv layer backward: upstream gradient shape mismatch"));
        }
        if grads.weights.len() != self.weights.len() || grads.biases.len() != self.biases.len() {
            return Err(Error::shape("gradient buffer does not match layer"));
        }
        let (h, w) = (self.height, self.width);
        let (h1, h2) = (self.half_height, self.half_width);
        let (kh, kw) = (2 * h1 + 1, 2 * h2 + 1);

        for (gb, &g) in grads.biases.iter_mut().zip(grad_out.as_slice()) {
            *gb += g;
        }

        let padded = Padded::from_planes(x.as_slice(), self.in_maps, h, w, h1, h2);
        let out_len = h * padded.stride;
        let grad_plane = out_len + LANES;
        let mut strided = Scratch::zeroed(self.out_maps * grad_plane);
        for (i, plane) in grad_out.as_slice().chunks_exact(h * w).enumerate() {
            let dst = &mut strided[i * grad_plane..];
            for (src, row) in plane.chunks_exact(w).zip(dst.chunks_exact_mut(padded.stride)) {
                row[..w].copy_from_slice(src);
            }
        }
        kernel_grads(
            &padded,
            &strided,
            grad_plane,
            self.in_maps,
            self.out_maps,
            kh,
            kw,
            out_len,
            &mut grads.weights,
        );

        let g_padded = Padded::from_planes(grad_out.as_slice(), self.out_maps, h, w, h1, h2);
        let flipped = transpose_flip(&self.weights, self.in_maps, self.out_maps, kh, kw);
        let mut acc = Scratch::zeroed(self.in_maps * out_len);
        correlate_bank(&g_padded, self.out_maps, self.in_maps, &flipped, kh, kw, out_len, &mut acc);
        let mut grad_in = vec![0.0; self.in_maps * h * w];
        for (src, dst) in acc.chunks_exact(padded.stride).zip(grad_in.chunks_exact_mut(w)) {
            dst.copy_from_slice(&src[..w]);
        }
        Ok(Tensor3::from_vec_unchecked(self.in_maps, h, w, grad_in))
    }
}

pub fn conv_layer_forward(inputs: &Tensor3, layer: &ConvLayer) -> Result<Tensor3> {
    layer.forward(inputs)
}

pub fn relu(x: &Tensor3) -> Tensor3 {
    x.map(|v| v.max(0.0))
}

/// Gradient of relu given its input; the derivative at exactly 0 is 0.
pub fn relu_backward(x: &Tensor3, grad_out: &Tensor3) -> Result<Tensor3> {
    if !x.same_shape(grad_out) {
        return Err(Error::shape("relu backward: shape mismatch"));
    }
    let data = x
        .as_slice()
        .iter()
        .zip(grad_out.as_slice())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    let (c, h, w) = x.shape();
    Ok(Tensor3::from_vec_unchecked(c, h, w, data))
}

/// Flat input index of the maximum of every 2x2 window (first maximum in
/// row-major order wins ties).
#[derive(Clone, Debug, PartialEq)]
pub struct PoolIndices {
    input_shape: (usize, usize, usize),
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

pub fn max_pool2d(x: &Tensor3) -> Result<Tensor3> {
    max_pool2d_indexed(x).map(|(y, _)| y)
}

/// 2x2 max pooling with stride 2, also returning the winning positions.
pub fn max_pool2d_indexed(x: &Tensor3) -> Result<(Tensor3, PoolIndices)> {
    let (c, h, w) = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "2x2 pooling needs even height and width, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = x.as_slice();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for r in 0..oh {
            for s in 0..ow {
                let i0 = base + 2 * r * w + 2 * s;
                let mut best = i0;
                for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                    if src[cand] > src[best] {
                        best = cand;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor3::from_vec_unchecked(c, oh, ow, out),
        PoolIndices {
            input_shape: (c, h, w),
            argmax,
        },
    ))
}

pub fn max_pool2d_backward(indices: &PoolIndices, grad_out: &Tensor3) -> Result<Tensor3> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::shape("pool backward: gradient size mismatch"));
    }
    let (c, h, w) = indices.input_shape;
    let mut grad = vec![0.0; c * h * w];
    for (&i, &g) in indices.argmax.iter().zip(grad_out.as_slice()) {
        grad[i] += g;
    }
    Ok(Tensor3::from_vec_unchecked(c, h, w, grad))
}

/// Two stacked conv layers with a shortcut:
/// `relu(conv_b(relu(conv_a(x))) + shortcut(x))`, where the shortcut is the
/// identity or a 1x1 projection when channel counts differ.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub conv_a: ConvLayer,
    pub conv_b: ConvLayer,
    pub projection: Option<ConvLayer>,
}

/// Activations recorded by [`ResidualBlock::forward_traced`].
#[derive(Clone, Debug)]
pub struct ResidualTrace {
    input: Tensor3,
    pre_a: Tensor3,
    act_a: Tensor3,
    pre_out: Tensor3,
}

impl ResidualTrace {
    pub(crate) fn pre_a_slice(&self) -> &[f64] {
        self.pre_a.as_slice()
    }

    pub(crate) fn pre_out_slice(&self) -> &[f64] {
        self.pre_out.as_slice()
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        self.pre_out.shape()
    }
}

impl ResidualBlock {
    pub fn new(conv_a: ConvLayer, conv_b: ConvLayer, projection: Option<ConvLayer>) -> Result<Self> {
        if conv_a.out_maps != conv_b.in_maps {
            return Err(Error::shape("conv_a output maps must feed conv_b"));
        }
        if conv_a.plane_size() != conv_b.plane_size() {
            return Err(Error::shape("conv_a and conv_b must share plane size"));
        }
        match &projection {
            Some(p) => {
                if p.half_sizes() != (0, 0) {
                    return Err(Error::shape("projection shortcut must be 1x1"));
                }
                if p.in_maps != conv_a.in_maps || p.out_maps != conv_b.out_maps {
                    return Err(Error::shape("projection must map block input to block output maps"));
                }
            }
            None => {
                if conv_a.in_maps != conv_b.out_maps {
                    return Err(Error::shape(format!(
                        "identity shortcut needs equal maps, got {} -> {}",
                        conv_a.in_maps, conv_b.out_maps
                    )));
                }
            }
        }
        Ok(ResidualBlock {
            conv_a,
            conv_b,
            projection,
        })
    }

    /// Randomly initialised block mapping `in_maps` to `maps`; a projection is
    /// created only when the two differ.
    pub fn random<R: Rng>(
        in_maps: usize,
        maps: usize,
        half: usize,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let conv_a = ConvLayer::random(in_maps, maps, half, half, height, width, rng)?;
        let conv_b = ConvLayer::random(maps, maps, half, half, height, width, rng)?;
        let projection = if in_maps != maps {
            Some(ConvLayer::random(in_maps, maps, 0, 0, height, width, rng)?)
        } else {
            None
        };
        ResidualBlock::new(conv_a, conv_b, projection)
    }

    pub fn zeros_like(&self) -> Self {
        ResidualBlock {
            conv_a: self.conv_a.zeros_like(),
            conv_b: self.conv_b.zeros_like(),
            projection: self.projection.as_ref().map(ConvLayer::zeros_like),
        }
    }

    pub fn in_maps(&self) -> usize {
        self.conv_a.in_maps
    }

    pub fn out_maps(&self) -> usize {
        self.conv_b.out_maps
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        [&self.conv_a, &self.conv_b]
            .into_iter()
            .chain(self.projection.as_ref())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer> {
        [&mut self.conv_a, &mut self.conv_b]
            .into_iter()
            .chain(self.projection.as_mut())
    }

    fn shortcut(&self, x: &Tensor3) -> Result<Tensor3> {
        match &self.projection {
            Some(p) => p.forward(x),
            None => Ok(x.clone()),
        }
    }

    pub fn forward(&self, x: &Tensor3) -> Result<Tensor3> {
        self.forward_traced(x).map(|(y, _)| y)
    }

    pub fn forward_traced(&self, x: &Tensor3) -> Result<(Tensor3, ResidualTrace)> {
        let pre_a = self.conv_a.forward(x)?;
        let act_a = relu(&pre_a);
        let mut pre_out = self.conv_b.forward(&act_a)?;
        let shortcut = self.shortcut(x)?;
        pre_out.add_assign(&shortcut)?;
        let out = relu(&pre_out);
        Ok((
            out,
            ResidualTrace {
                input: x.clone(),
                pre_a,
                act_a,
                pre_out,
            },
        ))
    }

    /// Returns `dL/dx` and accumulates parameter gradients into `grads`.
    pub fn backward(
        &self,
        trace: &ResidualTrace,
        grad_out: &Tensor3,
        grads: &mut ResidualBlock,
    ) -> Result<Tensor3> {
        let g_pre_out = relu_backward(&trace.pre_out, grad_out)?;
        let g_act_a = self.conv_b.backward(&trace.act_a, &g_pre_out, &mut grads.conv_b)?;
        let g_pre_a = relu_backward(&trace.pre_a, &g_act_a)?;
        let mut g_x = self.conv_a.backward(&trace.input, &g_pre_a, &mut grads.conv_a)?;
        match (&self.projection, &mut grads.projection) {
            (Some(p), Some(gp)) => {
                let g_short = p.backward(&trace.input, &g_pre_out, gp)?;
                g_x.add_assign(&g_short)?;
            }
            (None, None) => g_x.add_assign(&g_pre_out)?,
            _ => return Err(Error::shape("gradient buffer does not match block")),
        }
        Ok(g_x)
    }
}

pub fn residual_block_forward(x: &Tensor3, block: &ResidualBlock) -> Result<Tensor3> {
    block.forward(x)
}
