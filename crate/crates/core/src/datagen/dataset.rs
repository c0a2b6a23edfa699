//! Labelled synthetic datasets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::{derive_label, LabelScheme};
use super::scene::{generate_image, Jitter, SceneParams};
use crate::error::{Error, Result};
use crate::seed::mix_seed;
use crate::tensor::Tensor3;

const ORDER_STREAM: u64 = 0x4f52_4445;
const FRACTION_STREAM: u64 = 0x4652_4143;

/// Scene settings shared by every image of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageSettings {
    pub height: usize,
    pub width: usize,
    pub jitter: Jitter,
    pub noise_sigma: f64,
}

impl Default for ImageSettings {
    fn default() -> Self {
        let p = SceneParams::default();
        ImageSettings {
            height: p.height,
            width: p.width,
            jitter: p.jitter,
            noise_sigma: p.noise_sigma,
        }
    }
}

impl ImageSettings {
    pub fn scene(&self, plaque_fraction: f64, seed: u64) -> SceneParams {
        SceneParams {
            height: self.height,
            width: self.width,
            plaque_fraction,
            jitter: self.jitter,
            noise_sigma: self.noise_sigma,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor3>,
    pub labels: Vec<usize>,
    pub scheme: LabelScheme,
    /// Realised plaque fraction of every image.
    pub fractions: Vec<f64>,
}

impl Dataset {
    /// Checks the length, label-range and common-shape invariants.
    pub fn new(images: Vec<Tensor3>, labels: Vec<usize>, scheme: LabelScheme, fractions: Vec<f64>) -> Result<Self> {
        if images.len() != labels.len() || images.len() != fractions.len() {
            return Err(Error::Consistency(format!(
                "{} images, {} labels, {} fractions",
                images.len(),
                labels.len(),
                fractions.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= scheme.class_count()) {
            return Err(Error::Consistency(format!(
                "label {bad} out of range for {scheme} ({} classes)",
                scheme.class_count()
            )));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|im| im.shape() != first.shape()) {
                return Err(Error::Consistency("images differ in shape".into()));
            }
        }
        Ok(Dataset {
            images,
            labels,
            scheme,
            fractions,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.scheme.class_count()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count()];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

/// Splits `n` into integer parts proportional to `weights` (largest remainder,
/// ties to the lower index).
pub(crate) fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut parts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - parts[a] as f64, exact[b] - parts[b] as f64);
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let missing = n - parts.iter().sum::<usize>();
    for &k in order.iter().take(missing) {
        parts[k] += 1;
    }
    parts
}

fn check_mix(class_mix: &[f64], scheme: LabelScheme) -> Result<()> {
    if class_mix.len() != scheme.class_count() {
        return Err(Error::invalid(format!(
            "class mix has {} entries, {scheme} has {} classes",
            class_mix.len(),
            scheme.class_count()
        )));
    }
    if class_mix.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::invalid("class proportions must be finite and non-negative"));
    }
    let sum: f64 = class_mix.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("class proportions sum to {sum}, not 1")));
    }
    Ok(())
}

/// Uniform class proportions for `scheme`.
pub fn uniform_mix(scheme: LabelScheme) -> Vec<f64> {
    let k = scheme.class_count();
    vec![1.0 / k as f64; k]
}

/// Draws `n` images whose target fractions are uniform inside their class
/// bins; stored labels come from the realised fractions.
pub fn generate_dataset(
    n: usize,
    scheme: LabelScheme,
    class_mix: &[f64],
    base_seed: u64,
    settings: &ImageSettings,
) -> Result<Dataset> {
    check_mix(class_mix, scheme)?;
    let k = scheme.class_count();
    if n < 10 * k {
        return Err(Error::invalid(format!(
            "{scheme} needs at least {} images, got {n}",
            10 * k
        )));
    }
    settings.scene(0.0, 0).validate()?;

    let mut targets: Vec<usize> = apportion(n, class_mix)
        .into_iter()
        .enumerate()
        .flat_map(|(c, m)| std::iter::repeat_n(c, m))
        .collect();
    targets.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[base_seed, ORDER_STREAM])));

    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut fractions = Vec::with_capacity(n);
    for (i, &class) in targets.iter().enumerate() {
        let seed = mix_seed(&[base_seed, i as u64]);
        let (lo, hi) = scheme.bin(class)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, FRACTION_STREAM]));
        let target = rng.gen_range(lo..hi);
        let (image, realized) = generate_image(&settings.scene(target, seed))?;
        labels.push(derive_label(realized, scheme)?);
        fractions.push(realized);
        images.push(image);
    }
    Dataset::new(images, labels, scheme, fractions)
}
