//! Dataset loading, splitting and model inputs.

use std::collections::HashMap;

use mda_core::data::synthetic::SyntheticSpec;
use mda_core::data::{
    gen_synthetic, load_avmnist, split, Dataset, DatasetSplit, ModalityKind, Payload,
};
use mda_core::encoders::{MfccConfig, ModalityInput, TokenDims};
use mda_core::Tensor;

use crate::config::{DatasetKind, ExperimentConfig, SyntheticProfile};
use crate::error::{HarnessError, Result};

pub fn synthetic_spec(cfg: &ExperimentConfig) -> SyntheticSpec {
    match cfg.synthetic_profile {
        SyntheticProfile::Standard => SyntheticSpec::standard(cfg.prototype_seed),
        SyntheticProfile::Noiseless => SyntheticSpec::noiseless(cfg.prototype_seed),
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    Ok(match cfg.dataset {
        DatasetKind::Synthetic => gen_synthetic(
            &synthetic_spec(cfg),
            cfg.synthetic_samples,
            cfg.synthetic_seed,
        )?,
        DatasetKind::Avmnist => {
            let missing = |k: &str| HarnessError::Config(format!("{k} is required for avmnist"));
            load_avmnist(
                cfg.mnist_images
                    .as_ref()
                    .ok_or_else(|| missing("mnist_images"))?,
                cfg.mnist_labels
                    .as_ref()
                    .ok_or_else(|| missing("mnist_labels"))?,
                cfg.audio_dir.as_ref().ok_or_else(|| missing("audio_dir"))?,
                cfg.pairing_seed,
            )?
        }
    })
}

/// A loaded dataset with its split and precomputed audio features.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub split: DatasetSplit,
    /// Sample positions (not ids) of the train and test sets.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub mfcc: Option<MfccConfig>,
    /// Pooled MFCCs `[n, n_coefficients]` of every sample.
    pub audio_features: Option<Tensor>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let dataset = load_dataset(cfg)?;
    prepare_dataset(cfg, dataset)
}

pub fn prepare_dataset(cfg: &ExperimentConfig, dataset: Dataset) -> Result<Prepared> {
    dataset.validate()?;
    let split = split(&dataset, cfg.train_ratio, cfg.split_seed)?;
    let pos: HashMap<u64, usize> = dataset
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id, i))
        .collect();
    let train = split.train.iter().map(|id| pos[id]).collect();
    let test = split.test.iter().map(|id| pos[id]).collect();

    let (mfcc, audio_features) = match dataset.modality_index(ModalityKind::Audio) {
        None => (None, None),
        Some(m) => {
            let rate = dataset.sample_rate.ok_or_else(|| {
                HarnessError::Config("audio dataset without a sample rate".into())
            })?;
            let mfcc = MfccConfig::for_sample_rate(rate);
            let n = mfcc.n_coefficients;
            let mut data = Vec::with_capacity(dataset.len() * n);
            for s in &dataset.samples {
                match &s.payloads[m] {
                    Some(Payload::Waveform(w)) => {
                        data.extend(mda_core::encoders::mfcc::pooled_mfcc(w, &mfcc)?)
                    }
                    _ => data.extend(std::iter::repeat_n(0.0, n)),
                }
            }
            (Some(mfcc), Some(Tensor::new(vec![dataset.len(), n], data)?))
        }
    };
    Ok(Prepared {
        config: cfg.clone(),
        dataset,
        split,
        train,
        test,
        mfcc,
        audio_features,
    })
}

impl Prepared {
    pub fn n_modalities(&self) -> usize {
        self.dataset.modalities.len()
    }

    pub fn classes(&self) -> usize {
        self.dataset.classes
    }

    pub fn dims(&self) -> Result<TokenDims> {
        Ok(TokenDims::new(self.config.d_lat, self.config.tokens)?)
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.dataset.samples[i].label).collect()
    }

    pub fn ids(&self, idx: &[usize]) -> Vec<u64> {
        idx.iter().map(|&i| self.dataset.samples[i].id).collect()
    }

    pub fn text_index(&self) -> Option<usize> {
        self.dataset.modality_index(ModalityKind::Text)
    }

    /// Clean tokens of the text modality; empty sequences where absent.
    pub fn tokens(&self, idx: &[usize]) -> Vec<Vec<usize>> {
        let Some(m) = self.text_index() else {
            return vec![Vec::new(); idx.len()];
        };
        idx.iter()
            .map(|&i| match &self.dataset.samples[i].payloads[m] {
                Some(Payload::Tokens(t)) => t.clone(),
                _ => Vec::new(),
            })
            .collect()
    }

    /// Whether modality `m` is absent, per sample.
    pub fn absent(&self, m: usize, idx: &[usize]) -> Vec<bool> {
        idx.iter()
            .map(|&i| !self.dataset.samples[i].present(m))
            .collect()
    }

    /// Encoder input of modality `m` for the samples at `idx`. Absent
    /// payloads become zeros; callers mask them.
    pub fn input(&self, m: usize, idx: &[usize]) -> Result<ModalityInput> {
        Ok(match self.dataset.modalities[m] {
            ModalityKind::Image => {
                let (h, w) = self.dataset.image_shape.ok_or_else(|| {
                    HarnessError::Config("image dataset without an image shape".into())
                })?;
                let mut data = Vec::with_capacity(idx.len() * h * w);
                for &i in idx {
                    match &self.dataset.samples[i].payloads[m] {
                        Some(Payload::Image(px)) => data.extend_from_slice(px),
                        _ => data.extend(std::iter::repeat_n(0.0, h * w)),
                    }
                }
                ModalityInput::Image(Tensor::new(vec![idx.len(), 1, h, w], data)?)
            }
            ModalityKind::Text => ModalityInput::Tokens(
                self.tokens(idx)
                    .into_iter()
                    .map(|t| if t.is_empty() { vec![0] } else { t })
                    .collect(),
            ),
            ModalityKind::Audio => {
                let f = self
                    .audio_features
                    .as_ref()
                    .expect("audio features are computed in prepare");
                ModalityInput::AudioFeatures(gather_rows(f, idx)?)
            }
        })
    }
}

/// Rows `idx` of a tensor whose first axis indexes samples.
pub fn gather_rows(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let row: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Ok(Tensor::new(shape, data)?)
}
