//! On-disk formats: netpbm images, dataset directories, experiment
//! configuration and run manifests.

pub mod config;
pub mod dataset;
pub mod ppm;

pub use config::{dataset_digest, DatasetSource, ExperimentConfig, GenerateSpec, RunManifest, RUN_MANIFEST_FILE};
pub use dataset::{export_dataset, image_name, load_dataset, read_manifest, DatasetManifest, FORMAT_VERSION};
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
