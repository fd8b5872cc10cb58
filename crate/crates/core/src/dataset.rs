//! Labeled image collections, stratified splitting, and the on-disk
//! dataset directory (`manifest.csv` plus one PGM file per image).

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgm;
use crate::sampler::PoolId;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "noDefect")]
    NoDefect,
    #[serde(rename = "defect")]
    Defect,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::NoDefect => "noDefect",
            Label::Defect => "defect",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noDefect" => Ok(Label::NoDefect),
            "defect" => Ok(Label::Defect),
            other => Err(Error::Label(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::Dataset(format!("unknown domain `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    /// File name inside the dataset directory.
    pub name: String,
    pub image: Tensor,
    pub label: Label,
    pub domain: Domain,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<LabeledImage>,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledImage>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples matching the given domain and label, in order.
    pub fn select(&self, domain: Domain, label: Label) -> Vec<&LabeledImage> {
        self.samples
            .iter()
            .filter(|s| s.domain == domain && s.label == label)
            .collect()
    }

    pub fn images(&self, domain: Domain, label: Label) -> Vec<Tensor> {
        self.select(domain, label)
            .into_iter()
            .map(|s| s.image.clone())
            .collect()
    }

    pub fn filter_domain(&self, domain: Domain) -> Dataset {
        Dataset::new(
            self.samples
                .iter()
                .filter(|s| s.domain == domain)
                .cloned()
                .collect(),
        )
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    pub fn concat(mut self, other: Dataset) -> Dataset {
        self.samples.extend(other.samples);
        self
    }
}

/// The three training pools: source no-defect, source defect and target
/// no-defect. Target defect samples are never part of training.
#[derive(Clone, Debug, Default)]
pub struct TrainingPools {
    pub source_no_defect: Vec<Tensor>,
    pub source_defect: Vec<Tensor>,
    pub target_no_defect: Vec<Tensor>,
}

impl TrainingPools {
    pub fn from_splits(source_train: &Dataset, target_train: &Dataset) -> Self {
        Self {
            source_no_defect: source_train.images(Domain::Source, Label::NoDefect),
            source_defect: source_train.images(Domain::Source, Label::Defect),
            target_no_defect: target_train.images(Domain::Target, Label::NoDefect),
        }
    }

    pub fn image(&self, pool: PoolId, idx: usize) -> &Tensor {
        match pool {
            PoolId::SourceNoDefect => &self.source_no_defect[idx],
            PoolId::SourceDefect => &self.source_defect[idx],
            PoolId::TargetNoDefect => &self.target_no_defect[idx],
            PoolId::SourceTargetNoDefect => {
                let n = self.source_no_defect.len();
                if idx < n {
                    &self.source_no_defect[idx]
                } else {
                    &self.target_no_defect[idx - n]
                }
            }
        }
    }
}

/// Label-stratified split; `train_fraction` of each class goes to the
/// training part. Both parts keep the original sample order.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!(
            "fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = HashSet::new();
    for label in [Label::NoDefect, Label::Defect] {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.samples[i].label == label)
            .collect();
        if idx.is_empty() {
            continue;
        }
        let n_train = (train_fraction * idx.len() as f64).round() as usize;
        if n_train == 0 || n_train == idx.len() {
            return Err(Error::Split(format!(
                "fraction {train_fraction} leaves an empty {label} partition ({} samples)",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        train_idx.extend(idx.into_iter().take(n_train));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in dataset.samples.iter().enumerate() {
        if train_idx.contains(&i) {
            train.push(s.clone());
        } else {
            test.push(s.clone());
        }
    }
    Ok((Dataset::new(train), Dataset::new(test)))
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    filename: String,
    label: String,
    domain: String,
}

/// Writes every sample as a PGM file plus `manifest.csv`.
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut names = HashSet::new();
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(dir.join(MANIFEST))
        .map_err(csv_err)?;
    for s in &dataset.samples {
        if !names.insert(&s.name) {
            return Err(Error::Dataset(format!("duplicate file name `{}`", s.name)));
        }
        fs::write(dir.join(&s.name), pgm::encode(&s.image)?)?;
        writer
            .serialize(ManifestRow {
                filename: s.name.clone(),
                label: s.label.to_string(),
                domain: s.domain.to_string(),
            })
            .map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset_with(dir, None)
}

/// Reads a dataset directory, optionally resizing every image to
/// `(height, width)` by nearest neighbour.
pub fn read_dataset_with(dir: impl AsRef<Path>, resize: Option<(usize, usize)>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = dir.join(MANIFEST);
    let mut reader = csv::Reader::from_path(&manifest)
        .map_err(|e| Error::Dataset(format!("{}: {e}", manifest.display())))?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["filename", "label", "domain"] {
        return Err(Error::Dataset(format!(
            "manifest header must be `filename,label,domain`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut samples = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Dataset(format!("manifest row {row_no}: {e}")))?;
        let label: Label = row.label.parse().map_err(|_| {
            Error::Dataset(format!(
                "manifest row {row_no}: unknown label `{}`",
                row.label
            ))
        })?;
        let domain: Domain = row
            .domain
            .parse()
            .map_err(|e| Error::Dataset(format!("manifest row {row_no}: {e}")))?;
        let path = dir.join(&row.filename);
        let bytes = fs::read(&path).map_err(|e| {
            Error::Dataset(format!(
                "manifest row {row_no}: cannot read `{}`: {e}",
                row.filename
            ))
        })?;
        let mut image = pgm::decode(&bytes)
            .map_err(|e| Error::Dataset(format!("manifest row {row_no}: {e}")))?;
        if let Some((h, w)) = resize {
            if image.shape()[..2] != [h, w] {
                image = pgm::resize_nearest(&image, h, w)?;
            }
        }
        samples.push(LabeledImage {
            name: row.filename,
            image,
            label,
            domain,
        });
    }
    if samples.is_empty() {
        return Err(Error::Dataset(format!(
            "{} has no rows",
            manifest.display()
        )));
    }
    Ok(Dataset::new(samples))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Dataset(format!("manifest: {e}"))
}
