//! Command-line front end. Exit codes: 0 success, 1 usage or configuration
//! error, 2 data or verification failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cnn::{checkpoint, grad_check, ArchSpec, CnnModel};
use crate::datagen::LabelScheme;
use crate::error::Error;
use crate::eval::{
    read_report, run_experiment, run_single, sig6, to_csv, write_report, Learner, Selection, ShuffleResult,
};
use crate::io::{export_dataset, DatasetSource, ExperimentConfig, RunManifest};
use crate::tensor::{ChannelMask, Tensor3};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Largest acceptable relative gradient error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(
    name = "qlf",
    version,
    about = "Synthetic dental-plaque image benchmark: residual CNN versus shallow baselines",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Debug, Args)]
struct Common {
    /// JSON experiment configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed for splits and model fitting (for `generate`: the image seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    scheme: Option<LabelScheme>,
    /// Comma-separated channel compositions, e.g. `r,rg,rgb`.
    #[arg(long, value_delimiter = ',')]
    compositions: Option<Vec<ChannelMask>>,
    /// Comma-separated models: lr,svmk,svml,gnb,gbc,knc,rfc,cnn.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<Learner>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset (PPM images, labels.csv, manifest.json).
    Generate {
        #[command(flatten)]
        common: Common,
        /// Number of images.
        #[arg(long)]
        n: Option<usize>,
        /// Gaussian pixel-noise sigma.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Fit one model on one split and report train/validation/test F1.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Learner,
        #[arg(long, default_value = "rgb")]
        composition: ChannelMask,
        /// Which of the ten shuffles to use.
        #[arg(long, default_value_t = 0)]
        shuffle: usize,
    },
    /// One model over the configured compositions and ten shuffles.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Learner,
    },
    /// The full model x composition matrix (default compositions R, RG, RGB).
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of the CNN gradient on a random input.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, default_value_t = 16)]
        height: usize,
        #[arg(long, default_value_t = 16)]
        width: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
    },
    /// Re-render report.csv, report.json and plotdata.csv from a stored report.json.
    Report {
        /// A report.json file or the directory holding it.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => Failure::Usage(m),
            other => Failure::Data(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn load_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        // A configuration that cannot be read or parsed is a usage error.
        Some(path) => ExperimentConfig::from_file(path).map_err(|e| Failure::Usage(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(scheme) = common.scheme {
        cfg.scheme = scheme;
    }
    if let Some(c) = &common.compositions {
        cfg.compositions = c.clone();
    }
    if let Some(m) = &common.models {
        cfg.models = m.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let mut json = serde_json::to_string_pretty(value).expect("serialisable");
    json.push('\n');
    std::fs::write(path, json).map_err(|e| Failure::Data(Error::io(path, e)))
}

fn generate(common: &Common, n: Option<usize>, noise: Option<f64>, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = load_config(&Common { seed: None, ..common.clone() })?;
    let DatasetSource::Generate(spec) = &mut cfg.dataset else {
        return Err(Failure::Usage("`generate` needs a generated dataset source".into()));
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    if let Some(n) = n {
        spec.n = n;
    }
    if let Some(noise) = noise {
        spec.image.noise_sigma = noise;
    }
    let spec = spec.clone();
    cfg.validate()?;
    let data = spec.generate(cfg.scheme)?;
    export_dataset(&data, &cfg.out, Some(&spec))?;
    RunManifest::new("generate", &cfg, Some(&data)).write(&cfg.out)?;
    let _ = writeln!(
        out,
        "wrote {} {} images to {} (class counts {:?})",
        data.len(),
        data.scheme,
        cfg.out.display(),
        data.class_histogram()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    model: Learner,
    composition: &'a ChannelMask,
    #[serde(flatten)]
    result: &'a ShuffleResult,
}

fn train_one(
    common: &Common,
    model: Learner,
    composition: &ChannelMask,
    shuffle: usize,
    out: &mut dyn Write,
) -> CliResult<()> {
    let cfg = load_config(common)?;
    let data = cfg.dataset()?;
    let plan = cfg.trial_plan(&data, common.jobs as usize)?;
    let (result, network) = run_single(&plan, &data, model, composition, shuffle)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Failure::Data(Error::io(&cfg.out, e)))?;
    write_json(
        &TrainOutput {
            model,
            composition,
            result: &result,
        },
        &cfg.out.join("train.json"),
    )?;
    if let Some(net) = network {
        checkpoint::save(&net, &cfg.out.join("model.qlfcnn"))?;
    }
    RunManifest::new("train", &cfg, Some(&data)).write(&cfg.out)?;
    let val_f1 = match &result.selection {
        Selection::Grid { val_f1, .. } | Selection::Epoch { val_f1, .. } => *val_f1,
    };
    let _ = writeln!(
        out,
        "{model} {composition} shuffle {shuffle}: train F1 {} validation F1 {} test F1 {}",
        sig6(result.train_f1),
        sig6(val_f1),
        sig6(result.test_f1)
    );
    Ok(())
}

fn run_matrix(command: &str, cfg: ExperimentConfig, jobs: u64, out: &mut dyn Write) -> CliResult<()> {
    let data = cfg.dataset()?;
    let plan = cfg.trial_plan(&data, jobs as usize)?;
    let report = run_experiment(&plan, &data)?;
    write_report(&report, &cfg.out)?;
    RunManifest::new(command, &cfg, Some(&data)).write(&cfg.out)?;
    let _ = out.write_all(to_csv(&report).as_bytes());
    Ok(())
}

fn gradcheck(
    seed: u64,
    (channels, height, width, classes): (usize, usize, usize, usize),
    epsilon: f64,
    out: &mut dyn Write,
) -> CliResult<()> {
    let arch = ArchSpec::desk(channels, height, width, classes);
    let model = CnnModel::build(&arch, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..channels * height * width).map(|_| rng.gen::<f64>()).collect();
    let image = Tensor3::from_vec(channels, height, width, data)?;
    let label = rng.gen_range(0..classes);
    let report = grad_check(&model, &image, label, epsilon)?;
    let _ = writeln!(out, "max relative error: {:e}", report.max_relative_error);
    let _ = writeln!(
        out,
        "checked {} parameters ({} skipped at activation kinks)",
        report.checked, report.skipped
    );
    if report.max_relative_error < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(Failure::Data(Error::State(format!(
            "relative gradient error {:e} exceeds {GRADCHECK_TOLERANCE:e}",
            report.max_relative_error
        ))))
    }
}

fn report(input: &Path, dir: &Path, out: &mut dyn Write) -> CliResult<()> {
    let path = if input.is_dir() { input.join("report.json") } else { input.to_path_buf() };
    let report = read_report(&path)?;
    for p in write_report(&report, dir)? {
        let _ = writeln!(out, "wrote {}", p.display());
    }
    Ok(())
}

fn dispatch(command: Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Generate { common, n, noise } => generate(&common, n, noise, out),
        Command::Train {
            common,
            model,
            composition,
            shuffle,
        } => train_one(&common, model, &composition, shuffle, out),
        Command::Evaluate { common, model } => {
            let mut cfg = load_config(&common)?;
            cfg.models = vec![model];
            run_matrix("evaluate", cfg, common.jobs, out)
        }
        Command::Ablate { common } => run_matrix("ablate", load_config(&common)?, common.jobs, out),
        Command::Gradcheck {
            seed,
            channels,
            height,
            width,
            classes,
            epsilon,
        } => gradcheck(seed, (channels, height, width, classes), epsilon, out),
        Command::Report { input, out: dir } => report(&input, &dir, out),
    }
}

/// Parses `args` (program name first) and runs the command, writing normal
/// output to `out` and diagnostics to `err`. Returns the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DATA
        }
    }
}
