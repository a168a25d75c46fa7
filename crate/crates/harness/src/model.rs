//! Uni-modal encoders with their heads, and fusion-stage models.

use mda_core::autodiff::{Tape, Var};
use mda_core::data::ModalityKind;
use mda_core::encoders::{
    AudioEncoder, ImageEncoder, ImageEncoderConfig, ModalityEncoder, ModalityInput, TextEncoder,
};
use mda_core::fusion::{uni_classify, BaselineModel, Classifier, MdaConfig, MdaModel};
use mda_core::params::Bound;
use mda_core::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::FusionKind;
use crate::error::{HarnessError, Result};
use crate::prepare::Prepared;

/// Independent seed for one named purpose of a run seed.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Rows evaluated per forward pass outside training.
pub const EVAL_BATCH: usize = 128;

#[derive(Debug, Clone)]
pub struct UniModel {
    pub modality: usize,
    pub kind: ModalityKind,
    pub encoder: ModalityEncoder,
    pub head: Classifier,
    pub store: ParamStore,
}

/// Fresh encoder and head for modality `m`, initialized from `seed`.
pub fn build_unimodal(prep: &Prepared, m: usize, seed: u64) -> Result<UniModel> {
    let kind = prep.dataset.modalities[m];
    let dims = prep.dims()?;
    let cfg = &prep.config;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("init/{kind}")));
    let mut store = ParamStore::new();
    let encoder = match kind {
        ModalityKind::Image => {
            let (h, w) = prep.dataset.image_shape.ok_or_else(|| {
                HarnessError::Config("image dataset without an image shape".into())
            })?;
            let mut ic = ImageEncoderConfig::new(h, w);
            ic.channels = cfg.image_channels;
            ModalityEncoder::Image(ImageEncoder::new(&mut store, ic, dims, &mut rng)?)
        }
        ModalityKind::Text => {
            let schema = prep.dataset.text.as_ref().ok_or_else(|| {
                HarnessError::Config("text modality without a slot schema".into())
            })?;
            ModalityEncoder::Text(TextEncoder::new(
                &mut store,
                schema.vocab_size(),
                schema.slots.len(),
                dims,
                &mut rng,
            )?)
        }
        ModalityKind::Audio => {
            let mfcc = prep.mfcc.ok_or_else(|| {
                HarnessError::Config("audio modality without MFCC settings".into())
            })?;
            ModalityEncoder::Audio(AudioEncoder::new(&mut store, mfcc, dims, &mut rng)?)
        }
    };
    let head = Classifier::new(
        &mut store,
        "uni.head",
        dims.d_lat,
        cfg.hidden,
        prep.classes(),
        &mut rng,
    );
    Ok(UniModel {
        modality: m,
        kind,
        encoder,
        head,
        store,
    })
}

impl UniModel {
    pub fn logits(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: &ModalityInput,
        masked: &[bool],
    ) -> Result<Var> {
        let phi = self.encoder.encode(tape, bound, input, masked)?;
        Ok(uni_classify(tape, bound, phi, &self.head)?)
    }

    /// Class predictions for the samples at `idx`, absent payloads masked.
    pub fn predict(&self, prep: &Prepared, idx: &[usize]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(idx.len());
        for chunk in idx.chunks(EVAL_BATCH) {
            let mut tape = Tape::new();
            let bound = self.store.bind(&mut tape, false);
            let input = prep.input(self.modality, chunk)?;
            let logits = self.logits(
                &mut tape,
                &bound,
                &input,
                &prep.absent(self.modality, chunk),
            )?;
            out.extend(argmax_rows(tape.value(logits)));
        }
        Ok(out)
    }

    /// Φ `[B, t, d_tok]` without gradient tracking.
    pub fn phi(&self, input: &ModalityInput, masked: &[bool]) -> Result<Tensor> {
        Ok(self.encoder.encode_values(&self.store, input, masked)?)
    }

    /// Self-attention query projection `W_Q`, reused by the chain.
    pub fn query(&self) -> &Tensor {
        self.store.get(self.encoder.attention().w_q)
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .map(|row| (0..c).fold(0, |best, j| if row[j] > row[best] { j } else { best }))
        .collect()
}

#[derive(Debug, Clone)]
pub enum FusionHead {
    Mda(MdaModel),
    Baseline(BaselineModel),
}

#[derive(Debug, Clone)]
pub struct FusionModel {
    pub kind: FusionKind,
    pub head: FusionHead,
    pub store: ParamStore,
}

pub fn build_fusion(prep: &Prepared, kind: FusionKind, seed: u64) -> Result<FusionModel> {
    let cfg = &prep.config;
    let dims = prep.dims()?;
    let n = prep.n_modalities();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("init/fusion/{kind}")));
    let mut store = ParamStore::new();
    let head = match kind {
        FusionKind::Mda => FusionHead::Mda(MdaModel::new(
            &mut store,
            MdaConfig {
                n_modalities: n,
                dims,
                classes: prep.classes(),
                hidden: cfg.hidden,
                fusion_input: cfg.fusion_input,
                weight_mode: cfg.weight_mode,
                orders: cfg.chain_order.clone(),
            },
            &mut rng,
        )?),
        FusionKind::Baseline(mode) => FusionHead::Baseline(BaselineModel::new(
            &mut store,
            mode,
            n,
            dims,
            prep.classes(),
            cfg.hidden,
            &mut rng,
        )?),
    };
    Ok(FusionModel { kind, head, store })
}

impl FusionModel {
    /// Logits and, for MDA, the `[B, N]` modality weights.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        phis: &[Var],
        queries: &[Var],
    ) -> Result<(Var, Option<Var>)> {
        Ok(match &self.head {
            FusionHead::Mda(m) => {
                let out = m.forward(tape, bound, phis, queries)?;
                (out.logits, Some(out.weights))
            }
            FusionHead::Baseline(b) => (b.forward(tape, bound, phis)?, None),
        })
    }
}
