//! Missing-modality and text-noise schedules.
//!
//! A plan fixes, per sample, which modality (if any) has its latent replaced
//! by ones and which text slot (if any) is swapped for another token of the
//! same slot. Selection is counted-exact: the ids are shuffled with a seeded
//! generator and the first `round((1 − η)·n)` are masked; noise selection is
//! an independent second shuffle.
//!
//! Text format, one line per sample after an optional `#` header:
//!
//! ```text
//! # seed=7 eta=0.7 noise=0.2 modalities=3
//! 0,2,-
//! 1,-,1:14
//! ```

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoders::LatentFeature;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanEntry {
    pub sample_id: u64,
    pub masked_modality: Option<usize>,
    /// `(slot, replacement token)`
    pub noised_slot: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionPlan {
    pub seed: u64,
    pub eta: f64,
    pub noise_rate: f64,
    pub n_modalities: usize,
    /// In the order of the ids the plan was made for.
    pub entries: Vec<PlanEntry>,
}

/// Slot vocabularies and the clean tokens of every sample, aligned with the
/// sample ids handed to [`make_corruption_plan`].
#[derive(Debug, Clone, Copy)]
pub struct TextSlots<'a> {
    pub vocab: &'a [Vec<usize>],
    pub tokens: &'a [Vec<usize>],
}

fn check_rate(name: &str, r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Validation(format!("{name} {r} outside [0, 1]")));
    }
    Ok(())
}

/// Number of samples selected for a rate `r` out of `n`.
pub fn selected_count(r: f64, n: usize) -> usize {
    ((r * n as f64).round() as usize).min(n)
}

pub fn make_corruption_plan(
    sample_ids: &[u64],
    eta: f64,
    noise_rate: f64,
    seed: u64,
    n_modalities: usize,
    text: Option<TextSlots<'_>>,
) -> Result<CorruptionPlan> {
    check_rate("completeness rate", eta)?;
    check_rate("noise rate", noise_rate)?;
    let n = sample_ids.len();
    if n_modalities == 0 {
        return Err(Error::Validation(
            "a plan needs at least one modality".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries: Vec<PlanEntry> = sample_ids
        .iter()
        .map(|&sample_id| PlanEntry {
            sample_id,
            masked_modality: None,
            noised_slot: None,
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for &i in &order[..selected_count(1.0 - eta, n)] {
        entries[i].masked_modality = Some(rng.random_range(0..n_modalities));
    }

    let noisy = selected_count(noise_rate, n);
    if noisy > 0 {
        let text = text.ok_or_else(|| {
            Error::Validation("text noise requested for a dataset without text slots".into())
        })?;
        if text.tokens.len() != n {
            return Err(Error::Validation(format!(
                "{} token sequences for {n} sample ids",
                text.tokens.len()
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &i in &order[..noisy] {
            let tokens = &text.tokens[i];
            let slots = tokens.len().min(text.vocab.len());
            if slots == 0 {
                return Err(Error::Validation(format!(
                    "sample {} has no text slots",
                    sample_ids[i]
                )));
            }
            let slot = rng.random_range(0..slots);
            let choices: Vec<usize> = text.vocab[slot]
                .iter()
                .copied()
                .filter(|&t| t != tokens[slot])
                .collect();
            if choices.is_empty() {
                return Err(Error::Validation(format!(
                    "slot {slot} has no alternative token"
                )));
            }
            entries[i].noised_slot = Some((slot, choices[rng.random_range(0..choices.len())]));
        }
    }
    Ok(CorruptionPlan {
        seed,
        eta,
        noise_rate,
        n_modalities,
        entries,
    })
}

/// All-ones latent when `masked`, otherwise the input unchanged.
pub fn mask_missing(latent: &LatentFeature, masked: bool) -> LatentFeature {
    if masked {
        LatentFeature(vec![1.0; latent.len()])
    } else {
        latent.clone()
    }
}

/// Replaces the token at `slot` with `replacement`.
pub fn inject_text_noise(tokens: &[usize], slot: usize, replacement: usize) -> Result<Vec<usize>> {
    let original = *tokens.get(slot).ok_or_else(|| {
        Error::Validation(format!(
            "slot {slot} outside a {}-token sequence",
            tokens.len()
        ))
    })?;
    if original == replacement {
        return Err(Error::Contract(format!(
            "replacement token {replacement} equals the original in slot {slot}"
        )));
    }
    let mut out = tokens.to_vec();
    out[slot] = replacement;
    Ok(out)
}

impl CorruptionPlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.masked_modality.is_some())
            .count()
    }

    pub fn noised_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.noised_slot.is_some())
            .count()
    }

    /// Whether the plan corrupts nothing.
    pub fn is_clean(&self) -> bool {
        self.masked_count() == 0 && self.noised_count() == 0
    }

    /// Per-sample mask flags for modality `m`, in entry order.
    pub fn mask_flags(&self, m: usize) -> Vec<bool> {
        self.entries
            .iter()
            .map(|e| e.masked_modality == Some(m))
            .collect()
    }

    /// Applies the plan's noise to tokens aligned with the entries.
    pub fn apply_noise(&self, tokens: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
        if tokens.len() != self.entries.len() {
            return Err(Error::Validation(format!(
                "{} token sequences for a plan of {}",
                tokens.len(),
                self.entries.len()
            )));
        }
        self.entries
            .iter()
            .zip(tokens)
            .map(|(e, t)| match e.noised_slot {
                Some((slot, rep)) => inject_text_noise(t, slot, rep),
                None => Ok(t.clone()),
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# seed={} eta={} noise={} modalities={}\n",
            self.seed, self.eta, self.noise_rate, self.n_modalities
        );
        for e in &self.entries {
            let _ = write!(out, "{},", e.sample_id);
            match e.masked_modality {
                Some(m) => {
                    let _ = write!(out, "{m},");
                }
                None => out.push_str("-,"),
            }
            match e.noised_slot {
                Some((s, r)) => {
                    let _ = writeln!(out, "{s}:{r}");
                }
                None => out.push_str("-\n"),
            }
        }
        out
    }

    /// Parses [`CorruptionPlan::to_text`] output. A missing header leaves the
    /// rates at values counted from the entries and the seed at 0.
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Format {
            kind: "corruption plan",
            message: format!("line {}: {msg}", line + 1),
        };
        let mut header: Option<(u64, f64, f64, usize)> = None;
        let mut entries = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut h = (0u64, f64::NAN, f64::NAN, 0usize);
                for field in rest.split_whitespace() {
                    let (k, v) = field
                        .split_once('=')
                        .ok_or_else(|| bad(ln, "malformed header field"))?;
                    let num = || bad(ln, &format!("bad value for {k}"));
                    match k {
                        "seed" => h.0 = v.parse().map_err(|_| num())?,
                        "eta" => h.1 = v.parse().map_err(|_| num())?,
                        "noise" => h.2 = v.parse().map_err(|_| num())?,
                        "modalities" => h.3 = v.parse().map_err(|_| num())?,
                        _ => {}
                    }
                }
                header = Some(h);
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(bad(
                    ln,
                    "expected `sample_id,masked_modality|-,slot:replacement|-`",
                ));
            }
            let sample_id = parts[0].parse().map_err(|_| bad(ln, "bad sample id"))?;
            let masked_modality = match parts[1] {
                "-" => None,
                m => Some(m.parse().map_err(|_| bad(ln, "bad modality index"))?),
            };
            let noised_slot = match parts[2] {
                "-" => None,
                s => {
                    let (slot, rep) = s
                        .split_once(':')
                        .ok_or_else(|| bad(ln, "bad slot:replacement"))?;
                    Some((
                        slot.parse().map_err(|_| bad(ln, "bad slot"))?,
                        rep.parse().map_err(|_| bad(ln, "bad replacement"))?,
                    ))
                }
            };
            entries.push(PlanEntry {
                sample_id,
                masked_modality,
                noised_slot,
            });
        }
        let n = entries.len().max(1) as f64;
        let masked = entries
            .iter()
            .filter(|e| e.masked_modality.is_some())
            .count() as f64;
        let noised = entries.iter().filter(|e| e.noised_slot.is_some()).count() as f64;
        let max_modality = entries
            .iter()
            .filter_map(|e| e.masked_modality)
            .max()
            .map_or(1, |m| m + 1);
        let (seed, eta, noise_rate, n_modalities) = match header {
            Some((s, e, r, m)) => (
                s,
                if e.is_nan() { 1.0 - masked / n } else { e },
                if r.is_nan() { noised / n } else { r },
                if m == 0 { max_modality } else { m },
            ),
            None => (0, 1.0 - masked / n, noised / n, max_modality),
        };
        Ok(Self {
            seed,
            eta,
            noise_rate,
            n_modalities,
            entries,
        })
    }
}
