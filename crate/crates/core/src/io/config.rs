//! JSON experiment configuration and the per-run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::load_dataset;
use crate::datagen::{generate_dataset, uniform_mix, Dataset, ImageSettings, LabelScheme};
use crate::error::{Error, Result};
use crate::eval::{CnnSettings, Learner, SplitFractions, TrialPlan};
use crate::shallow::Grids;
use crate::tensor::ChannelMask;

pub const RUN_MANIFEST_FILE: &str = "run-manifest.json";

/// Parameters of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSpec {
    pub n: usize,
    /// Class proportions; uniform when absent.
    pub class_mix: Option<Vec<f64>>,
    pub seed: u64,
    pub image: ImageSettings,
}

impl Default for GenerateSpec {
    fn default() -> Self {
        GenerateSpec {
            n: 300,
            class_mix: None,
            seed: 0,
            image: ImageSettings::default(),
        }
    }
}

impl GenerateSpec {
    pub fn generate(&self, scheme: LabelScheme) -> Result<Dataset> {
        let mix = self.class_mix.clone().unwrap_or_else(|| uniform_mix(scheme));
        generate_dataset(self.n, scheme, &mix, self.seed, &self.image)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Generate(GenerateSpec),
    /// A directory in the export layout, relative to the working directory.
    Directory(PathBuf),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Generate(GenerateSpec::default())
    }
}

fn default_scheme() -> LabelScheme {
    LabelScheme::Rfpp3
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

/// Everything a run depends on. Unknown keys are rejected; missing keys take
/// their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default = "default_scheme")]
    pub scheme: LabelScheme,
    #[serde(default = "ChannelMask::ablation_set")]
    pub compositions: Vec<ChannelMask>,
    #[serde(default = "Learner::all")]
    pub models: Vec<Learner>,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default)]
    pub cnn: CnnSettings,
    #[serde(default)]
    pub split: SplitFractions,
    /// Base seed of splits and model fitting.
    #[serde(default)]
    pub seed: u64,
    /// Output directory; not part of the configuration hash.
    #[serde(default = "default_out", skip_serializing)]
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialise")
    }
}

fn check_unique<T: PartialEq + std::fmt::Display>(items: &[T], what: &str) -> Result<()> {
    if items.is_empty() {
        return Err(Error::invalid(format!("at least one {what} is required")));
    }
    for (i, a) in items.iter().enumerate() {
        if items[..i].contains(a) {
            return Err(Error::invalid(format!("{what} `{a}` is listed twice")));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        check_unique(&self.models, "model")?;
        check_unique(&self.compositions, "composition")?;
        self.grids.validate()?;
        self.cnn.train.validate()?;
        self.split.validate()?;
        if let DatasetSource::Generate(g) = &self.dataset {
            g.image.scene(0.0, g.seed).validate()?;
            self.cnn
                .arch(3, g.image.height, g.image.width, self.scheme.class_count())
                .validate()?;
        }
        Ok(())
    }

    /// Canonical JSON of the configuration (output directory excluded).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.canonical_json().as_bytes()))
    }

    /// Generates or loads the dataset; a loaded dataset must use the
    /// configured scheme.
    pub fn dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSource::Generate(g) => g.generate(self.scheme),
            DatasetSource::Directory(dir) => {
                let data = load_dataset(dir)?;
                if data.scheme != self.scheme {
                    return Err(Error::Consistency(format!(
                        "{} holds {} labels but the configuration asks for {}",
                        dir.display(),
                        data.scheme,
                        self.scheme
                    )));
                }
                Ok(data)
            }
        }
    }

    pub fn trial_plan(&self, data: &Dataset, jobs: usize) -> Result<TrialPlan> {
        Ok(TrialPlan::new(
            &data.labels,
            self.seed,
            self.split,
            self.models.clone(),
            self.compositions.clone(),
            self.grids.clone(),
            self.cnn.clone(),
        )?
        .with_jobs(jobs))
    }
}

/// SHA-256 over the labels and the exact sample values of a dataset.
pub fn dataset_digest(data: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(data.scheme.name().as_bytes());
    for (img, &label) in data.images.iter().zip(&data.labels) {
        h.update((label as u64).to_le_bytes());
        for dim in [img.channels(), img.height(), img.width()] {
            h.update((dim as u64).to_le_bytes());
        }
        for v in img.as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

/// Written next to every run's outputs; runs with equal manifests produce
/// equal outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub dataset_digest: Option<String>,
    pub base_seed: u64,
    pub dataset_seed: Option<u64>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, data: Option<&Dataset>) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: config.hash(),
            dataset_digest: data.map(dataset_digest),
            base_seed: config.seed,
            dataset_seed: match &config.dataset {
                DatasetSource::Generate(g) => Some(g.seed),
                DatasetSource::Directory(_) => None,
            },
            config: config.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RUN_MANIFEST_FILE);
        let mut json = serde_json::to_string_pretty(self).expect("manifest serialises");
        json.push('\n');
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
