//! Procedural tooth/plaque scenes.
//!
//! A scene is laid out in canonical coordinates (`v` down in units of image
//! height, `u` across) and rasterised by mapping every pixel centre through
//! the inverse of the jitter transform, so teeth, gingiva and plaque move
//! together. Plaque covers the tooth pixels closest to the gum margin; which
//! pixels are covered is decided on the rendered mask, so the realised
//! fraction tracks the requested one up to a single pixel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::mix_seed;
use crate::tensor::Tensor3;

const LAYOUT_STREAM: u64 = 0x5343_454e;
const NOISE_STREAM: u64 = 0x4e4f_4953;

/// Smallest supported image side.
pub const MIN_SIDE: usize = 16;

// Base colours before illumination gain (R, G, B).
const BACKGROUND: [f64; 3] = [0.04, 0.06, 0.05];
const GINGIVA: [f64; 3] = [0.66, 0.05, 0.15];
const TOOTH_RG: [f64; 2] = [0.22, 0.70];
const PLAQUE_RG: [f64; 2] = [0.70, 0.40];
const BLUE_FLOOR: f64 = 0.05;
const BLUE_TOOTH: f64 = 0.42;
// Lip and cheek tissue: gingiva-like red with an image-specific blue level.
const LIP_R: (f64, f64) = (0.50, 0.80);
const LIP_G: (f64, f64) = (0.02, 0.08);
const LIP_B: (f64, f64) = (0.05, 0.40);

// Pixel rule separating the scene classes by their G/R ratio; the three
// object colours sit near 3.2 (tooth), 0.57 (plaque) and 0.08 (gingiva).
const OBJECT_MIN_RG: f64 = 0.35;
const TOOTH_MIN_RATIO: f64 = 1.35;
const PLAQUE_MIN_RATIO: f64 = 0.32;
// Specular glare saturates every channel; the rule reads it as enamel.
const GLARE_MIN: f64 = 0.85;

/// Maximum magnitudes of the per-image random pose and focus changes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Jitter {
    pub rotation_deg: f64,
    pub translation_px: f64,
    /// Largest Gaussian focus-blur sigma, in pixels.
    pub blur_radius: f64,
    /// Largest relative magnification change (camera distance), in `[0, 1)`.
    pub zoom: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            rotation_deg: 8.0,
            translation_px: 4.0,
            blur_radius: 0.8,
            zoom: 0.25,
        }
    }
}

impl Jitter {
    pub fn none() -> Self {
        Jitter {
            rotation_deg: 0.0,
            translation_px: 0.0,
            blur_radius: 0.0,
            zoom: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    pub plaque_fraction: f64,
    pub jitter: Jitter,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            height: 54,
            width: 81,
            plaque_fraction: 0.0,
            jitter: Jitter::default(),
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_SIDE || self.width < MIN_SIDE {
            return Err(Error::invalid(format!(
                "resolution {}x{} is below the {MIN_SIDE}x{MIN_SIDE} minimum",
                self.height, self.width
            )));
        }
        if !(0.0..=1.0).contains(&self.plaque_fraction) {
            return Err(Error::range(format!(
                "plaque fraction {} outside [0, 1]",
                self.plaque_fraction
            )));
        }
        let j = &self.jitter;
        for (name, v) in [
            ("rotation", j.rotation_deg),
            ("translation", j.translation_px),
            ("blur radius", j.blur_radius),
            ("noise sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&j.zoom) {
            return Err(Error::invalid(format!("zoom must lie in [0, 1), got {}", j.zoom)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PixelClass {
    Background,
    /// Gingiva and lip tissue.
    Gingiva,
    Tooth,
    Plaque,
}

/// A rendered scene with its ground-truth pixel mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Tensor3,
    /// Row-major, one entry per pixel.
    pub mask: Vec<PixelClass>,
    /// Plaque pixels / (tooth + plaque pixels).
    pub realized_fraction: f64,
    /// Unshaded tooth colour after illumination gain; no noise-free tooth
    /// pixel outside the glare exceeds it.
    pub tooth_base: [f64; 3],
    /// Pixels washed out by specular glare, whatever lies underneath.
    pub glare: Vec<bool>,
}

struct Tooth {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    depth_scale: f64,
    /// Specular highlight on the convex lower half of the crown, as
    /// (centre u, centre v, half-width, half-height).
    glare: (f64, f64, f64, f64),
}

struct Layout {
    teeth: Vec<Tooth>,
    x0: f64,
    pitch: f64,
    gum_base: f64,
    gum_amp: f64,
    band: f64,
    ripple_amp: f64,
    ripple_freq: f64,
    ripple_phase: f64,
    /// Lip tissue covers background above `upper_lip` and below `lower_lip`.
    upper_lip: f64,
    lower_lip: f64,
}

impl Layout {
    fn random(rng: &mut ChaCha8Rng, aspect: f64) -> Self {
        let count = rng.gen_range(4..=5);
        let span = aspect * 0.82;
        let x0 = (aspect - span) / 2.0;
        let pitch = span / count as f64;
        let teeth = (0..count)
            .map(|k| {
                let cx = x0 + (k as f64 + 0.5) * pitch + rng.gen_range(-0.02..0.02);
                let cy = 0.58 + rng.gen_range(-0.03..0.03);
                let a = pitch * rng.gen_range(0.42..0.48);
                let b = rng.gen_range(0.27..0.33);
                let glare = (
                    cx + a * rng.gen_range(-0.25..0.25),
                    cy + b * rng.gen_range(0.15..0.45),
                    a * rng.gen_range(0.25..0.40),
                    b * rng.gen_range(0.18..0.30),
                );
                Tooth {
                    cx,
                    cy,
                    a,
                    b,
                    depth_scale: rng.gen_range(0.7..1.3),
                    glare,
                }
            })
            .collect();
        Layout {
            teeth,
            x0,
            pitch,
            gum_base: 0.30 + rng.gen_range(-0.04..0.04),
            gum_amp: rng.gen_range(0.03..0.07),
            band: rng.gen_range(0.12..0.30),
            ripple_amp: 0.015,
            ripple_freq: rng.gen_range(15.0..30.0),
            ripple_phase: rng.gen_range(0.0..std::f64::consts::TAU),
            upper_lip: rng.gen_range(-0.10..0.12),
            lower_lip: rng.gen_range(0.78..1.10),
        }
    }

    /// Gum margin height; highest over tooth centres, lowest between teeth.
    fn gum(&self, u: f64) -> f64 {
        let phase = std::f64::consts::TAU * (u - self.x0) / self.pitch;
        self.gum_base + self.gum_amp * (1.0 + phase.cos()) / 2.0
    }

    fn is_lip(&self, v: f64) -> bool {
        v < self.upper_lip || v > self.lower_lip
    }

    /// Pixel class at canonical `(u, v)`; for tooth points also the plaque
    /// ordering key (scaled depth below the margin), the shading term and
    /// whether the point lies in the tooth's glare.
    fn classify(&self, u: f64, v: f64) -> (PixelClass, f64, f64, bool) {
        let g = self.gum(u);
        if v < g {
            let class = if v > g - self.band {
                PixelClass::Gingiva
            } else {
                PixelClass::Background
            };
            return (class, 0.0, 0.0, false);
        }
        for t in &self.teeth {
            let (dx, dy) = ((u - t.cx) / t.a, (v - t.cy) / t.b);
            let rho2 = dx * dx + dy * dy;
            if rho2 <= 1.0 {
                let ripple = self.ripple_amp * (self.ripple_freq * u + self.ripple_phase).sin();
                let key = (v - g) / t.depth_scale + ripple;
                let (gu, gv, ga, gb) = t.glare;
                let glare = ((u - gu) / ga).powi(2) + ((v - gv) / gb).powi(2) <= 1.0;
                return (PixelClass::Tooth, key, rho2, glare);
            }
        }
        (PixelClass::Background, 0.0, 0.0, false)
    }
}

/// Separable Gaussian blur with edge clamping, in place.
fn gaussian_blur(plane: &mut [f64], h: usize, w: usize, sigma: f64) {
    if sigma < 1e-3 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * plane[r * w + clamp(c as isize + k as isize - radius, w)])
                .sum();
        }
    }
    for r in 0..h {
        for c in 0..w {
            plane[r * w + c] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[clamp(r as isize + k as isize - radius, h) * w + c])
                .sum();
        }
    }
}

/// Renders the scene described by `params`.
pub fn render_scene(params: &SceneParams) -> Result<Scene> {
    params.validate()?;
    let (h, w) = (params.height, params.width);
    let hf = h as f64;
    let aspect = w as f64 / hf;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[params.seed, LAYOUT_STREAM]));
    let layout = Layout::random(&mut rng, aspect);

    // Unit draws scaled afterwards, so changing a jitter magnitude leaves
    // every other random choice of the scene unchanged.
    let j = params.jitter;
    let theta = rng.gen_range(-1.0..=1.0) * j.rotation_deg.to_radians();
    let tx = rng.gen_range(-1.0..=1.0) * j.translation_px;
    let ty = rng.gen_range(-1.0..=1.0) * j.translation_px;
    let focus = rng.gen_range(0.0..=1.0) * j.blur_radius;
    let gain = rng.gen_range(0.75..1.25);
    let tint: [f64; 3] = std::array::from_fn(|_| gain * rng.gen_range(0.93..1.07));
    let scale = 1.0 + rng.gen_range(-1.0..=1.0) * j.zoom;
    let lip = [LIP_R, LIP_G, LIP_B].map(|(lo, hi)| rng.gen_range(lo..hi));

    let (sin, cos) = theta.sin_cos();
    let mut mask = vec![PixelClass::Background; h * w];
    let mut shade = vec![0.0; h * w];
    let mut lip_tissue = vec![false; h * w];
    let mut glare = vec![false; h * w];
    let mut keyed: Vec<(f64, usize)> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let x = (c as f64 + 0.5 - w as f64 / 2.0 - tx) / (hf * scale);
            let y = (r as f64 + 0.5 - hf / 2.0 - ty) / (hf * scale);
            let u = cos * x + sin * y + aspect / 2.0;
            let v = -sin * x + cos * y + 0.5;
            let (mut class, key, rho2, shine) = layout.classify(u, v);
            let i = r * w + c;
            glare[i] = shine;
            if class == PixelClass::Background && layout.is_lip(v) {
                class = PixelClass::Gingiva;
                lip_tissue[i] = true;
            }
            mask[i] = class;
            if class == PixelClass::Tooth {
                shade[i] = 0.8 + 0.2 * (1.0 - rho2);
                keyed.push((key, i));
            }
        }
    }

    let tooth_pixels = keyed.len();
    let covered = (params.plaque_fraction * tooth_pixels as f64).round() as usize;
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &keyed[..covered] {
        mask[i] = PixelClass::Plaque;
    }
    let realized_fraction = if tooth_pixels == 0 {
        0.0
    } else {
        covered as f64 / tooth_pixels as f64
    };

    let n = h * w;
    let mut data = vec![0.0; 3 * n];
    let (red, rest) = data.split_at_mut(n);
    let (green, blue) = rest.split_at_mut(n);
    let mut object = vec![0.0; n];
    for i in 0..n {
        let (rv, gv) = match mask[i] {
            PixelClass::Background => (BACKGROUND[0], BACKGROUND[1]),
            PixelClass::Gingiva if lip_tissue[i] => (lip[0], lip[1]),
            PixelClass::Gingiva => (GINGIVA[0], GINGIVA[1]),
            PixelClass::Tooth => (TOOTH_RG[0] * shade[i], TOOTH_RG[1] * shade[i]),
            PixelClass::Plaque => (PLAQUE_RG[0] * shade[i], PLAQUE_RG[1] * shade[i]),
        };
        red[i] = rv;
        green[i] = gv;
        if matches!(mask[i], PixelClass::Tooth | PixelClass::Plaque) {
            object[i] = 1.0;
        }
    }
    // Backscattered blue: tooth outline whose edges soften as plaque grows.
    gaussian_blur(&mut object, h, w, (0.3 + 2.2 * params.plaque_fraction) * hf / 54.0);
    for i in 0..n {
        blue[i] = match mask[i] {
            PixelClass::Gingiva if lip_tissue[i] => lip[2],
            PixelClass::Gingiva => GINGIVA[2],
            _ => BLUE_FLOOR + BLUE_TOOTH * object[i],
        };
    }

    for (plane, t) in data.chunks_exact_mut(n).zip(tint) {
        gaussian_blur(plane, h, w, focus);
        plane.iter_mut().for_each(|v| *v *= t);
        // Glare saturates the sensor, so it is neither blurred nor tinted.
        for (v, _) in plane.iter_mut().zip(&glare).filter(|(_, &g)| g) {
            *v = 1.0;
        }
    }
    if params.noise_sigma > 0.0 {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[params.seed, NOISE_STREAM]));
        let normal = Normal::new(0.0, params.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        data.iter_mut().for_each(|v| *v += normal.sample(&mut noise_rng));
    }
    // Clamp, then quantise to the 8-bit grid so PPM export is lossless.
    data.iter_mut().for_each(|v| *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);

    Ok(Scene {
        image: Tensor3::from_vec_unchecked(3, h, w, data),
        mask,
        realized_fraction,
        tooth_base: [TOOTH_RG[0] * tint[0], TOOTH_RG[1] * tint[1], BLUE_TOOTH * tint[2]],
        glare,
    })
}

/// Renders an image and returns it with its realised plaque fraction.
pub fn generate_image(params: &SceneParams) -> Result<(Tensor3, f64)> {
    let s = render_scene(params)?;
    Ok((s.image, s.realized_fraction))
}

/// Classifies a pixel with the generator's own colour rule. Glare hides
/// what is underneath and is assumed to be clean enamel.
pub fn classify_pixel(red: f64, green: f64) -> PixelClass {
    if red >= GLARE_MIN && green >= GLARE_MIN {
        return PixelClass::Tooth;
    }
    if red + green < OBJECT_MIN_RG {
        return PixelClass::Background;
    }
    let ratio = green / red.max(1e-6);
    if ratio >= TOOTH_MIN_RATIO {
        PixelClass::Tooth
    } else if ratio >= PLAQUE_MIN_RATIO {
        PixelClass::Plaque
    } else {
        PixelClass::Gingiva
    }
}

/// Plaque fraction estimated pixelwise from the R and G planes alone.
pub fn oracle_fraction(image: &Tensor3) -> Result<f64> {
    if image.channels() < 2 {
        return Err(Error::shape("oracle needs red and green planes"));
    }
    let (r, g) = (image.plane(0), image.plane(1));
    let (mut plaque, mut tooth) = (0usize, 0usize);
    for (&rv, &gv) in r.iter().zip(g) {
        match classify_pixel(rv, gv) {
            PixelClass::Plaque => plaque += 1,
            PixelClass::Tooth => tooth += 1,
            _ => {}
        }
    }
    Ok(if plaque + tooth == 0 {
        0.0
    } else {
        plaque as f64 / (plaque + tooth) as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean(fraction: f64, seed: u64) -> SceneParams {
        SceneParams {
            plaque_fraction: fraction,
            jitter: Jitter::none(),
            noise_sigma: 0.0,
            seed,
            ..SceneParams::default()
        }
    }

    #[test]
    fn no_plaque_means_no_elevated_red_on_teeth() {
        for seed in 0..5 {
            let s = render_scene(&clean(0.0, seed)).unwrap();
            assert_eq!(s.realized_fraction, 0.0);
            let red = s.image.plane(0);
            for (i, m) in s.mask.iter().enumerate() {
                assert_ne!(*m, PixelClass::Plaque);
                if *m == PixelClass::Tooth && !s.glare[i] {
                    // Quantisation may round up by half a level.
                    assert!(red[i] <= s.tooth_base[0] + 0.5 / 255.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn full_plaque_covers_the_teeth() {
        for seed in 0..5 {
            let (_, f) = generate_image(&clean(1.0, seed)).unwrap();
            assert!((0.9..=1.0).contains(&f), "{f}");
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let p = SceneParams {
            plaque_fraction: 0.3,
            seed: 11,
            ..SceneParams::default()
        };
        assert_eq!(render_scene(&p).unwrap(), render_scene(&p).unwrap());
        let q = SceneParams { seed: 12, ..p };
        assert_ne!(render_scene(&p).unwrap().image, render_scene(&q).unwrap().image);
    }

    #[test]
    fn realized_fraction_tracks_request() {
        for (k, f) in [0.05, 0.2, 0.45, 0.8].into_iter().enumerate() {
            let s = render_scene(&SceneParams {
                plaque_fraction: f,
                seed: k as u64,
                ..SceneParams::default()
            })
            .unwrap();
            assert!((s.realized_fraction - f).abs() < 2e-3);
            let teeth = s
                .mask
                .iter()
                .filter(|m| matches!(m, PixelClass::Tooth | PixelClass::Plaque))
                .count();
            let plaque = s.mask.iter().filter(|m| **m == PixelClass::Plaque).count();
            assert_eq!(s.realized_fraction, plaque as f64 / teeth as f64);
        }
    }

    #[test]
    fn values_are_clamped_and_quantised() {
        let s = render_scene(&SceneParams {
            plaque_fraction: 0.5,
            noise_sigma: 0.3,
            ..SceneParams::default()
        })
        .unwrap();
        for &v in s.image.as_slice() {
            assert!((0.0..=1.0).contains(&v));
            assert!(((v * 255.0).round() - v * 255.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pixel_rule_recovers_clean_classes() {
        for fraction in [0.2, 0.7] {
            let s = render_scene(&clean(fraction, 3)).unwrap();
            let (r, g) = (s.image.plane(0), s.image.plane(1));
            // What the image shows: glare reads as enamel.
            let seen: Vec<PixelClass> = s
                .mask
                .iter()
                .zip(&s.glare)
                .map(|(&m, &shine)| if shine { PixelClass::Tooth } else { m })
                .collect();
            assert!(s.glare.iter().any(|&g| g));
            let wrong = (0..seen.len()).filter(|&i| classify_pixel(r[i], g[i]) != seen[i]).count();
            assert_eq!(wrong, 0);
            let plaque = seen.iter().filter(|&&m| m == PixelClass::Plaque).count() as f64;
            let tooth = seen.iter().filter(|&&m| m == PixelClass::Tooth).count() as f64;
            assert!((oracle_fraction(&s.image).unwrap() - plaque / (plaque + tooth)).abs() < 1e-12);
        }
        // Below the glare band the estimate is exact.
        let s = render_scene(&clean(0.2, 3)).unwrap();
        assert!((oracle_fraction(&s.image).unwrap() - s.realized_fraction).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_params() {
        let bad = [
            SceneParams { height: 15, ..SceneParams::default() },
            SceneParams { plaque_fraction: 1.5, ..SceneParams::default() },
            SceneParams { noise_sigma: -0.1, ..SceneParams::default() },
            SceneParams {
                jitter: Jitter { rotation_deg: f64::NAN, ..Jitter::default() },
                ..SceneParams::default()
            },
        ];
        for p in bad {
            assert!(render_scene(&p).is_err());
        }
    }
}
