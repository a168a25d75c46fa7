//! Datasets: synthetic generation with an exact Bayes oracle, and
//! avMNIST-style ingestion of IDX digit images paired with spoken-digit WAVs.

pub mod avmnist;
pub mod idx;
pub mod manifest;
pub mod synthetic;
pub mod wav;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use avmnist::load_avmnist;
pub use synthetic::{bayes_oracle, gen_synthetic, OracleAccuracy, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModalityKind {
    Image,
    Text,
    Audio,
}

impl ModalityKind {
    pub fn name(self) -> &'static str {
        match self {
            ModalityKind::Image => "image",
            ModalityKind::Text => "text",
            ModalityKind::Audio => "audio",
        }
    }
}

impl fmt::Display for ModalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModalityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(ModalityKind::Image),
            "text" => Ok(ModalityKind::Text),
            "audio" => Ok(ModalityKind::Audio),
            other => Err(Error::Config(format!("unknown modality `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Row-major `H × W` pixels.
    Image(Vec<f64>),
    /// One token id per text slot.
    Tokens(Vec<usize>),
    /// Mono samples.
    Waveform(Vec<f64>),
}

impl Payload {
    pub fn kind(&self) -> ModalityKind {
        match self {
            Payload::Image(_) => ModalityKind::Image,
            Payload::Tokens(_) => ModalityKind::Text,
            Payload::Waveform(_) => ModalityKind::Audio,
        }
    }
}

/// One multi-modal record. A modality is present iff its payload is `Some`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub label: usize,
    pub payloads: Vec<Option<Payload>>,
}

impl Sample {
    pub fn present(&self, m: usize) -> bool {
        self.payloads.get(m).is_some_and(Option::is_some)
    }

    pub fn one_hot(&self, classes: usize) -> Vec<f64> {
        let mut v = vec![0.0; classes];
        v[self.label] = 1.0;
        v
    }
}

/// A named text slot and its `(token id, word)` vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TextSlot {
    pub name: String,
    pub tokens: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextSchema {
    pub slots: Vec<TextSlot>,
}

impl TextSchema {
    /// Token ids of every slot; id 0 is reserved for padding.
    pub fn slot_vocab(&self) -> Vec<Vec<usize>> {
        self.slots
            .iter()
            .map(|s| s.tokens.iter().map(|t| t.0).collect())
            .collect()
    }

    pub fn vocab_size(&self) -> usize {
        1 + self
            .slots
            .iter()
            .flat_map(|s| s.tokens.iter().map(|t| t.0))
            .max()
            .unwrap_or(0)
    }

    pub fn token_id(&self, slot: &str, word: &str) -> Option<usize> {
        self.slots
            .iter()
            .find(|s| s.name == slot)?
            .tokens
            .iter()
            .find(|t| t.1 == word)
            .map(|t| t.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub classes: usize,
    pub modalities: Vec<ModalityKind>,
    /// `(height, width)` when an image modality is present.
    pub image_shape: Option<(usize, usize)>,
    pub text: Option<TextSchema>,
    pub sample_rate: Option<u32>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn modality_index(&self, kind: ModalityKind) -> Option<usize> {
        self.modalities.iter().position(|&m| m == kind)
    }

    /// Samples whose ids appear in `ids`, in `ids` order.
    pub fn subset(&self, ids: &[u64]) -> Result<Dataset> {
        let index: std::collections::HashMap<u64, usize> = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id, i))
            .collect();
        let samples = ids
            .iter()
            .map(|id| {
                index
                    .get(id)
                    .map(|&i| self.samples[i].clone())
                    .ok_or_else(|| Error::Validation(format!("sample id {id} not in dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            samples,
            ..self.without_samples()
        })
    }

    fn without_samples(&self) -> Dataset {
        Dataset {
            name: self.name.clone(),
            classes: self.classes,
            modalities: self.modalities.clone(),
            image_shape: self.image_shape,
            text: self.text.clone(),
            sample_rate: self.sample_rate,
            samples: Vec::new(),
        }
    }

    /// One-hot label matrix `[n, classes]`.
    pub fn label_matrix(&self) -> Tensor {
        let data = self
            .samples
            .iter()
            .flat_map(|s| s.one_hot(self.classes))
            .collect();
        Tensor::new(vec![self.len(), self.classes], data).expect("rows match")
    }

    /// SHA-256 over ids, labels and payload bytes in sample order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        h.update((self.classes as u64).to_le_bytes());
        for s in &self.samples {
            h.update(s.id.to_le_bytes());
            h.update((s.label as u64).to_le_bytes());
            for p in &s.payloads {
                h.update(payload_bytes(p.as_ref()));
            }
        }
        hex_digest(h)
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            if s.label >= self.classes {
                return Err(Error::Validation(format!(
                    "sample {} has label {} with {} classes",
                    s.id, s.label, self.classes
                )));
            }
            if s.payloads.len() != self.modalities.len() {
                return Err(Error::Validation(format!(
                    "sample {} has {} payload slots for {} modalities",
                    s.id,
                    s.payloads.len(),
                    self.modalities.len()
                )));
            }
            for (p, &m) in s.payloads.iter().zip(&self.modalities) {
                if let Some(p) = p {
                    if p.kind() != m {
                        return Err(Error::Validation(format!(
                            "sample {} carries {} data in the {} slot",
                            s.id,
                            p.kind(),
                            m
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn payload_bytes(p: Option<&Payload>) -> Vec<u8> {
    let mut out = Vec::new();
    match p {
        None => out.push(0),
        Some(Payload::Image(v)) | Some(Payload::Waveform(v)) => {
            out.push(if matches!(p, Some(Payload::Image(_))) {
                1
            } else {
                3
            });
            out.extend((v.len() as u64).to_le_bytes());
            v.iter().for_each(|x| out.extend(x.to_le_bytes()));
        }
        Some(Payload::Tokens(t)) => {
            out.push(2);
            out.extend((t.len() as u64).to_le_bytes());
            t.iter().for_each(|x| out.extend((*x as u64).to_le_bytes()));
        }
    }
    out
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<u64>,
    pub test: Vec<u64>,
    pub seed: u64,
    pub train_ratio: f64,
}

/// Seeded split stratified by label. The train set receives
/// `round(ratio · n)` samples, apportioned over classes by largest remainder
/// so every class count is within one of proportional.
pub fn split(dataset: &Dataset, train_ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::Validation(format!(
            "train ratio {train_ratio} outside (0, 1)"
        )));
    }
    let mut by_class: Vec<Vec<u64>> = vec![Vec::new(); dataset.classes];
    for s in &dataset.samples {
        by_class
            .get_mut(s.label)
            .ok_or_else(|| Error::Validation(format!("label {} out of range", s.label)))?
            .push(s.id);
    }
    let n = dataset.len();
    let target = (train_ratio * n as f64).round() as usize;
    let exact: Vec<f64> = by_class
        .iter()
        .map(|c| c.len() as f64 * train_ratio)
        .collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..by_class.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = target.saturating_sub(counts.iter().sum());
    for &c in order.iter().cycle().take(by_class.len() * 2) {
        if missing == 0 {
            break;
        }
        if counts[c] < by_class[c].len() {
            counts[c] += 1;
            missing -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (ids, &k) in by_class.iter_mut().zip(&counts) {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        train.extend_from_slice(&ids[..k]);
        test.extend_from_slice(&ids[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit {
        train,
        test,
        seed,
        train_ratio,
    })
}
