//! On-disk dataset cache.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/image/<id>.f64     row-major pixels, little-endian f64
//! <dir>/text/<id>.txt      space-separated token ids
//! <dir>/audio/<id>.f64     samples, little-endian f64
//! ```
//!
//! `manifest.json` holds the dataset metadata, its content hash, and per
//! sample the id, label and, for every modality, either `null` (absent) or
//! the payload path relative to `<dir>` with the SHA-256 of the file bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{hex_digest, Dataset, ModalityKind, Payload, Sample, TextSchema, TextSlot};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub name: String,
    pub classes: usize,
    pub modalities: Vec<String>,
    pub image_shape: Option<(usize, usize)>,
    pub sample_rate: Option<u32>,
    pub text_slots: Option<Vec<ManifestSlot>>,
    /// [`Dataset::content_hash`] of the stored dataset.
    pub content_hash: String,
    pub samples: Vec<ManifestSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSlot {
    pub name: String,
    pub tokens: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: u64,
    pub label: usize,
    pub payloads: Vec<Option<PayloadFile>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadFile {
    pub path: String,
    pub sha256: String,
}

fn manifest_err(message: impl Into<String>) -> Error {
    Error::Format {
        kind: "manifest",
        message: message.into(),
    }
}

fn sha256(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex_digest(h)
}

fn encode_payload(p: &Payload) -> (&'static str, Vec<u8>) {
    match p {
        Payload::Image(v) => ("f64", v.iter().flat_map(|x| x.to_le_bytes()).collect()),
        Payload::Waveform(v) => ("f64", v.iter().flat_map(|x| x.to_le_bytes()).collect()),
        Payload::Tokens(t) => {
            let words: Vec<String> = t.iter().map(usize::to_string).collect();
            ("txt", (words.join(" ") + "\n").into_bytes())
        }
    }
}

fn decode_payload(kind: ModalityKind, bytes: &[u8], path: &str) -> Result<Payload> {
    let floats = || {
        if bytes.len() % 8 != 0 {
            return Err(manifest_err(format!(
                "{path}: length {} is not a multiple of 8",
                bytes.len()
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect::<Vec<_>>())
    };
    Ok(match kind {
        ModalityKind::Image => Payload::Image(floats()?),
        ModalityKind::Audio => Payload::Waveform(floats()?),
        ModalityKind::Text => {
            let text = std::str::from_utf8(bytes)
                .map_err(|_| manifest_err(format!("{path}: not UTF-8")))?;
            Payload::Tokens(
                text.split_whitespace()
                    .map(|w| {
                        w.parse()
                            .map_err(|_| manifest_err(format!("{path}: bad token `{w}`")))
                    })
                    .collect::<Result<_>>()?,
            )
        }
    })
}

/// Writes payload files and `manifest.json` under `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<Manifest> {
    let dir = dir.as_ref();
    dataset.validate()?;
    for m in &dataset.modalities {
        let sub = dir.join(m.name());
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    }
    let mut samples = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let payloads = s
            .payloads
            .iter()
            .zip(&dataset.modalities)
            .map(|(p, m)| {
                let Some(p) = p else { return Ok(None) };
                let (ext, bytes) = encode_payload(p);
                let rel = format!("{}/{}.{ext}", m.name(), s.id);
                let full = dir.join(&rel);
                std::fs::write(&full, &bytes).map_err(|e| Error::io(&full, e))?;
                Ok(Some(PayloadFile {
                    path: rel,
                    sha256: sha256(&bytes),
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(ManifestSample {
            id: s.id,
            label: s.label,
            payloads,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        name: dataset.name.clone(),
        classes: dataset.classes,
        modalities: dataset
            .modalities
            .iter()
            .map(|m| m.name().to_string())
            .collect(),
        image_shape: dataset.image_shape,
        sample_rate: dataset.sample_rate,
        text_slots: dataset.text.as_ref().map(|t| {
            t.slots
                .iter()
                .map(|s| ManifestSlot {
                    name: s.name.clone(),
                    tokens: s.tokens.clone(),
                })
                .collect()
        }),
        content_hash: dataset.content_hash(),
        samples,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| manifest_err(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads a dataset written by [`write_dataset`], checking every file hash
/// and the overall content hash.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| manifest_err(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(manifest_err(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let modalities = manifest
        .modalities
        .iter()
        .map(|m| {
            m.parse::<ModalityKind>()
                .map_err(|_| manifest_err(format!("unknown modality `{m}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for s in &manifest.samples {
        if s.payloads.len() != modalities.len() {
            return Err(manifest_err(format!(
                "sample {} lists {} payloads",
                s.id,
                s.payloads.len()
            )));
        }
        let payloads = s
            .payloads
            .iter()
            .zip(&modalities)
            .map(|(f, &kind)| {
                let Some(f) = f else { return Ok(None) };
                let full = dir.join(&f.path);
                let bytes = std::fs::read(&full).map_err(|e| Error::io(&full, e))?;
                if sha256(&bytes) != f.sha256 {
                    return Err(manifest_err(format!("{}: hash mismatch", f.path)));
                }
                decode_payload(kind, &bytes, &f.path).map(Some)
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            id: s.id,
            label: s.label,
            payloads,
        });
    }
    let dataset = Dataset {
        name: manifest.name,
        classes: manifest.classes,
        modalities,
        image_shape: manifest.image_shape,
        text: manifest.text_slots.map(|slots| TextSchema {
            slots: slots
                .into_iter()
                .map(|s| TextSlot {
                    name: s.name,
                    tokens: s.tokens,
                })
                .collect(),
        }),
        sample_rate: manifest.sample_rate,
        samples,
    };
    dataset.validate()?;
    if dataset.content_hash() != manifest.content_hash {
        return Err(manifest_err("content hash mismatch"));
    }
    Ok(dataset)
}
