//! Synthetic QLF-like images and their label schemes.

pub mod dataset;
pub mod labels;
pub mod scene;

pub use dataset::{generate_dataset, uniform_mix, Dataset, ImageSettings};
pub use labels::{derive_label, LabelScheme};
pub use scene::{generate_image, oracle_fraction, render_scene, Jitter, PixelClass, Scene, SceneParams};
