//! Reference-bank inference: an image is labeled by comparing the mean
//! Euclidean distance of its embedding to the positive (no-defect)
//! references against the mean distance to the negative (defect) ones.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::encoder::{ByteReader, EncoderModel};
use crate::error::{Error, Result};
use crate::layers::euclidean_distance;
use crate::tensor::Tensor;

pub const BANK_MAGIC: &[u8; 4] = b"CDRB";
pub const BANK_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceBank {
    positives: Vec<Vec<f32>>,
    negatives: Vec<Vec<f32>>,
    fingerprint: [u8; 32],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Verdict {
    pub label: Label,
    pub mean_d_pos: f64,
    pub mean_d_neg: f64,
}

/// Counts under the convention that the no-defect class is "positive".
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// true no-defect, predicted no-defect
    pub tp: usize,
    /// true no-defect, predicted defect
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// true defect, predicted defect
    pub tn: usize,
    /// true defect, predicted no-defect
    pub fp: usize,
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::NoDefect, Label::NoDefect) => self.tp += 1,
            (Label::NoDefect, Label::Defect) => self.fn_ += 1,
            (Label::Defect, Label::Defect) => self.tn += 1,
            (Label::Defect, Label::NoDefect) => self.fp += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.tn + self.fp
    }
}

impl ReferenceBank {
    pub fn from_embeddings(
        positives: Vec<Vec<f32>>,
        negatives: Vec<Vec<f32>>,
        fingerprint: [u8; 32],
    ) -> Result<Self> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::Bank(format!(
                "both reference lists must be nonempty, got {} positives and {} negatives",
                positives.len(),
                negatives.len()
            )));
        }
        let d = positives[0].len();
        if d == 0 || positives.iter().chain(&negatives).any(|e| e.len() != d) {
            return Err(Error::Bank("reference embeddings differ in length".into()));
        }
        Ok(Self {
            positives,
            negatives,
            fingerprint,
        })
    }

    pub fn positives(&self) -> &[Vec<f32>] {
        &self.positives
    }

    pub fn negatives(&self) -> &[Vec<f32>] {
        &self.negatives
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn dim(&self) -> usize {
        self.positives[0].len()
    }

    /// Verdict for an already computed query embedding. Equal means
    /// resolve to `Defect`.
    pub fn verdict(&self, query: &[f32]) -> Result<Verdict> {
        let mean = |refs: &[Vec<f32>]| -> Result<f64> {
            let mut sum = 0.0f64;
            for r in refs {
                sum += euclidean_distance(query, r)? as f64;
            }
            Ok(sum / refs.len() as f64)
        };
        let mean_d_pos = mean(&self.positives)?;
        let mean_d_neg = mean(&self.negatives)?;
        let label = if mean_d_pos < mean_d_neg {
            Label::NoDefect
        } else {
            Label::Defect
        };
        Ok(Verdict {
            label,
            mean_d_pos,
            mean_d_neg,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BANK_MAGIC);
        out.extend_from_slice(&BANK_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for set in [&self.positives, &self.negatives] {
            out.extend_from_slice(&(set.len() as u32).to_le_bytes());
            for e in set {
                for v in e {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&self.fingerprint);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4, "magic")? != BANK_MAGIC {
            return Err(Error::Format("magic: expected \"CDRB\"".into()));
        }
        let version = r.u32("version")?;
        if version != BANK_VERSION {
            return Err(Error::Format(format!(
                "version: expected {BANK_VERSION}, got {version}"
            )));
        }
        let dim = r.u32("embedding length")? as usize;
        if dim == 0 {
            return Err(Error::Format("embedding length: must be positive".into()));
        }
        let mut read_set = |name: &str| -> Result<Vec<Vec<f32>>> {
            let count = r.u32(&format!("{name} count"))? as usize;
            let raw = r.take(count * dim * 4, name)?;
            Ok(raw
                .chunks_exact(dim * 4)
                .map(|e| {
                    e.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect()
                })
                .collect())
        };
        let positives = read_set("positives")?;
        let negatives = read_set("negatives")?;
        let fingerprint: [u8; 32] = r.take(32, "fingerprint")?.try_into().unwrap();
        if !r.is_done() {
            return Err(Error::Format(format!(
                "trailing bytes: {} unexpected bytes after the fingerprint",
                r.remaining()
            )));
        }
        Self::from_embeddings(positives, negatives, fingerprint)
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn build_bank(
    model: &EncoderModel,
    positives: &[Tensor],
    negatives: &[Tensor],
) -> Result<ReferenceBank> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Bank(format!(
            "both reference lists must be nonempty, got {} positives and {} negatives",
            positives.len(),
            negatives.len()
        )));
    }
    let embed_all = |images: &[Tensor]| -> Result<Vec<Vec<f32>>> {
        images
            .iter()
            .map(|img| model.embed(img).map(|e| e.into_vec()))
            .collect()
    };
    ReferenceBank::from_embeddings(
        embed_all(positives)?,
        embed_all(negatives)?,
        model.fingerprint(),
    )
}

fn check_fresh(model: &EncoderModel, bank: &ReferenceBank) -> Result<()> {
    if model.fingerprint() != bank.fingerprint {
        return Err(Error::StaleBank);
    }
    Ok(())
}

pub fn classify(model: &EncoderModel, bank: &ReferenceBank, image: &Tensor) -> Result<Verdict> {
    check_fresh(model, bank)?;
    bank.verdict(model.embed(image)?.as_slice())
}

pub fn classify_batch(
    model: &EncoderModel,
    bank: &ReferenceBank,
    images: &[Tensor],
    labels: &[Label],
) -> Result<ConfusionMatrix> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(Error::Input(format!(
            "need equally many images and labels (at least one), got {} and {}",
            images.len(),
            labels.len()
        )));
    }
    check_fresh(model, bank)?;
    let mut cm = ConfusionMatrix::default();
    for (img, &truth) in images.iter().zip(labels) {
        let v = bank.verdict(model.embed(img)?.as_slice())?;
        cm.record(truth, v.label);
    }
    Ok(cm)
}
