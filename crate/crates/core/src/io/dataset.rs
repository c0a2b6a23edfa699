//! Dataset directories: `img_%05d.ppm` images, `labels.csv` and `manifest.json`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::GenerateSpec;
use super::ppm::{read_ppm, write_ppm};
use crate::datagen::{Dataset, LabelScheme};
use crate::error::{Error, Result};
use crate::eval::report::sig6;

pub const FORMAT_VERSION: u32 = 1;
pub const LABELS_FILE: &str = "labels.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
const LABELS_HEADER: &str = "filename,scheme,class,realized_fraction";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub scheme: LabelScheme,
    pub thresholds: Vec<f64>,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// How the images were generated; absent for externally supplied data.
    pub generator: Option<GenerateSpec>,
}

pub fn image_name(index: usize) -> String {
    format!("img_{index:05}.ppm")
}

/// Writes `data` into `dir` (created if needed). Images are quantised to
/// 8 bits.
pub fn export_dataset(data: &Dataset, dir: &Path, generator: Option<&GenerateSpec>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut labels = format!("{LABELS_HEADER}\n");
    for (i, (img, (&class, &fraction))) in data.images.iter().zip(data.labels.iter().zip(&data.fractions)).enumerate() {
        let name = image_name(i);
        write_ppm(img, &dir.join(&name))?;
        let _ = writeln!(labels, "{name},{},{class},{}", data.scheme, sig6(fraction));
    }
    let (height, width) = data.images.first().map_or((0, 0), |i| (i.height(), i.width()));
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        scheme: data.scheme,
        thresholds: data.scheme.thresholds().to_vec(),
        count: data.len(),
        height,
        width,
        generator: generator.cloned(),
    };
    let path = dir.join(LABELS_FILE);
    std::fs::write(&path, labels).map_err(|e| Error::io(&path, e))?;
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|_| Error::parse(path, "not valid UTF-8"))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: DatasetManifest =
        serde_json::from_str(&read_text(&path)?).map_err(|e| Error::parse(&path, e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::parse(
            &path,
            format!("format version {} is not supported (expected {FORMAT_VERSION})", manifest.format_version),
        ));
    }
    if manifest.thresholds != manifest.scheme.thresholds() {
        return Err(Error::Consistency(format!(
            "{}: thresholds {:?} differ from the {} thresholds {:?}",
            path.display(),
            manifest.thresholds,
            manifest.scheme,
            manifest.scheme.thresholds()
        )));
    }
    Ok(manifest)
}

struct LabelRow {
    class: usize,
    fraction: f64,
}

fn read_labels(path: &Path, scheme: LabelScheme) -> Result<Vec<(String, LabelRow)>> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == LABELS_HEADER => {}
        _ => return Err(Error::parse(path, format!("first line must be `{LABELS_HEADER}`"))),
    }
    let mut rows = Vec::new();
    for (no, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::parse(path, format!("line {}: {what}", no + 1));
        let fields: Vec<&str> = line.split(',').collect();
        let [name, row_scheme, class, fraction] = fields[..] else {
            return Err(bad(&format!("expected 4 fields, got {}", fields.len())));
        };
        let row_scheme: LabelScheme = row_scheme.parse().map_err(|_| bad(&format!("unknown scheme `{row_scheme}`")))?;
        if row_scheme != scheme {
            return Err(Error::Consistency(format!(
                "{} line {}: scheme {row_scheme} but the manifest says {scheme}",
                path.display(),
                no + 1
            )));
        }
        let class: usize = class.parse().map_err(|_| bad(&format!("bad class `{class}`")))?;
        let fraction: f64 = fraction.parse().map_err(|_| bad(&format!("bad fraction `{fraction}`")))?;
        rows.push((name.to_string(), LabelRow { class, fraction }));
    }
    Ok(rows)
}

/// Reads a dataset directory written by [`export_dataset`] (or laid out the
/// same way by hand). Images are ordered as in `labels.csv`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let entries: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    if entries.is_empty() {
        return Err(Error::Consistency(format!("{} is empty", dir.display())));
    }
    let manifest = read_manifest(dir)?;
    let rows = read_labels(&dir.join(LABELS_FILE), manifest.scheme)?;

    let mut images_on_disk: Vec<&String> = entries
        .iter()
        .filter(|n| n.starts_with("img_") && n.ends_with(".ppm"))
        .collect();
    images_on_disk.sort();
    if rows.len() != images_on_disk.len() || rows.len() != manifest.count {
        return Err(Error::Consistency(format!(
            "{}: {} label rows, {} images, manifest count {}",
            dir.display(),
            rows.len(),
            images_on_disk.len(),
            manifest.count
        )));
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut images = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    let mut fractions = Vec::with_capacity(rows.len());
    for (i, (name, row)) in rows.iter().enumerate() {
        if let Some(first) = seen.insert(name, i) {
            return Err(Error::Consistency(format!("{name} is labelled twice (rows {first} and {i})")));
        }
        if !images_on_disk.contains(&name) {
            return Err(Error::Consistency(format!("{name} is labelled but missing from {}", dir.display())));
        }
        let path = dir.join(name);
        let img = read_ppm(&path)?;
        if img.shape() != (3, manifest.height, manifest.width) {
            return Err(Error::Consistency(format!(
                "{}: shape {:?}, manifest expects 3x{}x{}",
                path.display(),
                img.shape(),
                manifest.height,
                manifest.width
            )));
        }
        images.push(img);
        labels.push(row.class);
        fractions.push(row.fraction);
    }
    Dataset::new(images, labels, manifest.scheme, fractions).map_err(|e| match e {
        Error::InvalidArgument(m) | Error::Shape(m) => Error::Consistency(format!("{}: {m}", dir.display())),
        other => other,
    })
}
