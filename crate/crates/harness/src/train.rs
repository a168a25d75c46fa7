//! Two-stage training: uni-modal encoders first, then fusion over frozen Φ.

use mda_core::corruption::{make_corruption_plan, CorruptionPlan, TextSlots};
use mda_core::encoders::{ModalityEncoder, ModalityInput};
use mda_core::optim::{adam_step, AdamConfig, AdamState};
use mda_core::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::FusionKind;
use crate::error::{HarnessError, Result};
use crate::model::{build_fusion, build_unimodal, derive_seed, FusionModel, UniModel, EVAL_BATCH};
use crate::prepare::{gather_rows, Prepared};

fn adam_config(prep: &Prepared) -> AdamConfig {
    AdamConfig {
        learning_rate: prep.config.learning_rate,
        weight_decay: prep.config.weight_decay,
        ..AdamConfig::default()
    }
}

fn shuffled_batches(rng: &mut ChaCha8Rng, idx: &[usize], batch: usize) -> Vec<Vec<usize>> {
    let mut order = idx.to_vec();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn check_loss(what: &str, epoch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::Divergence(format!(
            "{what}: loss {loss} in epoch {epoch}"
        )))
    }
}

#[derive(Debug, Clone)]
pub struct UniTraining {
    pub model: UniModel,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    pub test_accuracy: f64,
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Trains encoder, self-attention and head of modality `m` on clean data.
pub fn train_unimodal(prep: &Prepared, m: usize, seed: u64) -> Result<UniTraining> {
    let mut model = build_unimodal(prep, m, seed)?;
    if let ModalityEncoder::Audio(enc) = &model.encoder {
        let f = prep
            .audio_features
            .as_ref()
            .expect("audio features are computed in prepare");
        enc.fit_statistics(&mut model.store, &gather_rows(f, &prep.train)?)?;
    }
    let fixed = model.encoder.fixed_params();
    let mut state = AdamState::new(adam_config(prep), model.store.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("batches/{}", model.kind)));
    let mut loss_curve = Vec::with_capacity(prep.config.epochs);
    for epoch in 0..prep.config.epochs {
        let mut total = 0.0;
        for batch in shuffled_batches(&mut rng, &prep.train, prep.config.batch_size) {
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape, true);
            let input = prep.input(m, &batch)?;
            let logits = model.logits(&mut tape, &bound, &input, &prep.absent(m, &batch))?;
            let loss = tape.cross_entropy_indices(logits, &prep.labels(&batch))?;
            let value = tape.value(loss).item();
            check_loss(&format!("uni-modal {}", model.kind), epoch, value)?;
            total += value * batch.len() as f64;
            let grads = tape.backward(loss)?;
            let mut grads = model.store.gradients(&bound, &grads);
            for id in &fixed {
                grads[id.index()] = None;
            }
            adam_step(model.store.tensors_mut(), &grads, &mut state)?;
        }
        loss_curve.push(total / prep.train.len() as f64);
    }
    let test_accuracy = accuracy(&model.predict(prep, &prep.test)?, &prep.labels(&prep.test));
    Ok(UniTraining {
        model,
        loss_curve,
        test_accuracy,
    })
}

/// Φ of every sample with frozen encoders, plus the Φ a masked latent yields.
#[derive(Debug, Clone)]
pub struct PhiCache {
    /// `[n, t, d_tok]` per modality.
    pub clean: Vec<Tensor>,
    /// `[t, d_tok]` per modality.
    pub masked: Vec<Tensor>,
}

pub fn phi_cache(prep: &Prepared, unis: &[UniModel]) -> Result<PhiCache> {
    let all: Vec<usize> = (0..prep.dataset.len()).collect();
    let mut clean = Vec::with_capacity(unis.len());
    let mut masked = Vec::with_capacity(unis.len());
    for u in unis {
        let mut data = Vec::new();
        let mut shape = Vec::new();
        for chunk in all.chunks(EVAL_BATCH) {
            let phi = u.phi(
                &prep.input(u.modality, chunk)?,
                &prep.absent(u.modality, chunk),
            )?;
            shape = phi.shape().to_vec();
            data.extend_from_slice(phi.data());
        }
        shape[0] = all.len();
        clean.push(Tensor::new(shape, data)?);
        let one = u.phi(&prep.input(u.modality, &all[..1])?, &[true])?;
        let s = one.shape();
        masked.push(one.reshape(&[s[1], s[2]])?);
    }
    Ok(PhiCache { clean, masked })
}

/// Corruption plan over the samples at `idx`, drawing text noise from the
/// dataset's slot vocabularies.
pub fn plan_for(
    prep: &Prepared,
    idx: &[usize],
    eta: f64,
    noise: f64,
    seed: u64,
) -> Result<CorruptionPlan> {
    let tokens = prep.tokens(idx);
    let vocab = prep.dataset.text.as_ref().map(|t| t.slot_vocab());
    let text = vocab.as_ref().map(|v| TextSlots {
        vocab: v,
        tokens: &tokens,
    });
    Ok(make_corruption_plan(
        &prep.ids(idx),
        eta,
        noise,
        seed,
        prep.n_modalities(),
        text,
    )?)
}

/// Φ `[B, t, d_tok]` per modality for the samples at `idx` under `plan`
/// (aligned with `idx`). Absent payloads count as masked.
pub fn corrupted_phis(
    prep: &Prepared,
    unis: &[UniModel],
    cache: &PhiCache,
    idx: &[usize],
    plan: &CorruptionPlan,
) -> Result<Vec<Tensor>> {
    let text = prep.text_index();
    let noisy_rows: Vec<usize> = (0..idx.len())
        .filter(|&r| {
            plan.entries[r].noised_slot.is_some() && plan.entries[r].masked_modality != text
        })
        .collect();
    let mut out = Vec::with_capacity(unis.len());
    for (m, u) in unis.iter().enumerate() {
        let mut phi = gather_rows(&cache.clean[m], idx)?;
        let row = cache.masked[m].len();
        let absent = prep.absent(m, idx);
        if Some(m) == text && !noisy_rows.is_empty() {
            let clean: Vec<Vec<usize>> =
                prep.tokens(&noisy_rows.iter().map(|&r| idx[r]).collect::<Vec<_>>());
            let rows_plan = CorruptionPlan {
                entries: noisy_rows.iter().map(|&r| plan.entries[r]).collect(),
                ..plan.clone()
            };
            let noisy = rows_plan.apply_noise(&clean)?;
            let fresh = u.phi(
                &ModalityInput::Tokens(noisy),
                &vec![false; noisy_rows.len()],
            )?;
            for (k, &r) in noisy_rows.iter().enumerate() {
                phi.data_mut()[r * row..(r + 1) * row]
                    .copy_from_slice(&fresh.data()[k * row..(k + 1) * row]);
            }
        }
        for r in 0..idx.len() {
            if absent[r] || plan.entries[r].masked_modality == Some(m) {
                phi.data_mut()[r * row..(r + 1) * row].copy_from_slice(cache.masked[m].data());
            }
        }
        out.push(phi);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct FusionTraining {
    pub model: FusionModel,
    pub loss_curve: Vec<f64>,
}

/// SHA-256 of each uni-modal parameter store.
pub fn encoder_hashes(unis: &[UniModel]) -> Vec<String> {
    unis.iter().map(|u| u.store.content_hash()).collect()
}

/// Trains a fusion model over frozen encoders. The training plan is redrawn
/// every epoch at the given rates.
pub fn train_fusion(
    prep: &Prepared,
    unis: &[UniModel],
    cache: &PhiCache,
    kind: FusionKind,
    eta: f64,
    noise: f64,
    seed: u64,
) -> Result<FusionTraining> {
    if unis.len() != prep.n_modalities() {
        return Err(HarnessError::MissingCheckpoint(format!(
            "{} of {} uni-modal encoders available",
            unis.len(),
            prep.n_modalities()
        )));
    }
    let before = encoder_hashes(unis);
    let mut model = build_fusion(prep, kind, seed)?;
    let mut state = AdamState::new(adam_config(prep), model.store.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("batches/fusion/{kind}")));
    let queries: Vec<Tensor> = unis.iter().map(|u| u.query().clone()).collect();
    let labels = prep.labels(&prep.train);
    let mut loss_curve = Vec::with_capacity(prep.config.fusion_epochs);
    for epoch in 0..prep.config.fusion_epochs {
        let plan = plan_for(
            prep,
            &prep.train,
            eta,
            noise,
            derive_seed(seed, &format!("train-plan/{epoch}")),
        )?;
        let phis = corrupted_phis(prep, unis, cache, &prep.train, &plan)?;
        let positions: Vec<usize> = (0..prep.train.len()).collect();
        let mut total = 0.0;
        for batch in shuffled_batches(&mut rng, &positions, prep.config.batch_size) {
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape, true);
            let phi_vars = phis
                .iter()
                .map(|p| Ok(tape.constant(gather_rows(p, &batch)?)))
                .collect::<Result<Vec<_>>>()?;
            let q_vars: Vec<_> = queries.iter().map(|q| tape.constant(q.clone())).collect();
            let (logits, _) = model.forward(&mut tape, &bound, &phi_vars, &q_vars)?;
            let batch_labels: Vec<usize> = batch.iter().map(|&r| labels[r]).collect();
            let loss = tape.cross_entropy_indices(logits, &batch_labels)?;
            let value = tape.value(loss).item();
            check_loss(&format!("fusion {kind}"), epoch, value)?;
            total += value * batch.len() as f64;
            let grads = tape.backward(loss)?;
            let grads = model.store.gradients(&bound, &grads);
            adam_step(model.store.tensors_mut(), &grads, &mut state)?;
        }
        loss_curve.push(total / prep.train.len() as f64);
    }
    let after = encoder_hashes(unis);
    if let Some(m) = (0..unis.len()).find(|&m| before[m] != after[m]) {
        return Err(HarnessError::FrozenDrift(format!(
            "{} encoder hash {} became {}",
            unis[m].kind, before[m], after[m]
        )));
    }
    Ok(FusionTraining { model, loss_curve })
}
