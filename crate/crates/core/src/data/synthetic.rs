//! Three-modality synthetic task with a closed-form Bayes classifier.
//!
//! - image: class prototype (unit vector) plus isotropic Gaussian noise,
//!   laid out as a square array;
//! - text: one token per slot, drawn from a class-conditional categorical;
//! - audio: a sum of fixed-frequency sines whose amplitudes are Gaussian
//!   around class-dependent means, plus white noise.
//!
//! Every tone completes a whole number of cycles per clip (it sits on an
//! exact DFT bin), so the sines are exactly orthogonal: projecting a clip onto each tone
//! recovers its amplitude plus independent Gaussian noise of variance
//! `amp_sigma² + 2·noise_sigma²/n_samples`, and the residual carries no class
//! information. The oracle therefore scores amplitudes only.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{Dataset, ModalityKind, Payload, Sample, TextSchema, TextSlot};
use crate::encoders::mfcc::{MelFilterbank, MfccConfig};
use crate::error::{Error, Result};

/// Noise level of the image channel in the default spec.
pub const DEFAULT_IMAGE_SIGMA: f64 = 0.58;
/// Probability of a class's preferred token in each text slot.
pub const DEFAULT_TEXT_P_TRUE: f64 = 0.53;
/// Amplitude boost of a class's own tone.
pub const DEFAULT_TONE_BOOST: f64 = 0.08;
/// Amplitude noise of each tone.
pub const DEFAULT_AMP_SIGMA: f64 = 0.049;

pub const CLIP_RATE: u32 = 8000;
/// A quarter second at [`CLIP_RATE`].
pub const CLIP_SAMPLES: usize = 2000;

/// Side of the square synthetic images.
pub const IMAGE_SIDE: usize = 16;
/// Gaussian blur width, in pixels, applied to prototype noise fields.
pub const PROTOTYPE_BLUR: f64 = 2.0;

const SLOT_WORDS: [(&str, [&str; 5]); 4] = [
    ("shape", ["round", "oval", "lobulated", "irregular", "flat"]),
    (
        "echo",
        [
            "hypoechoic",
            "isoechoic",
            "hyperechoic",
            "anechoic",
            "mixed",
        ],
    ),
    (
        "location",
        ["antrum", "body", "fundus", "cardia", "duodenum"],
    ),
    ("size", ["small", "medium", "large", "giant", "tiny"]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct TextSlotSpec {
    pub name: String,
    pub words: Vec<String>,
    /// `class_probs[c][w]`: probability of word `w` under class `c`.
    pub class_probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioToneSpec {
    pub sample_rate: u32,
    pub n_samples: usize,
    /// Frequencies in Hz, each a whole number of cycles per clip.
    pub tone_hz: Vec<f64>,
    pub base_amplitude: f64,
    /// `class_offsets[c][k]`: added to the base amplitude of tone `k`.
    pub class_offsets: Vec<Vec<f64>>,
    pub amp_sigma: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub image_side: usize,
    /// One unit vector of length `image_side²` per class.
    pub image_prototypes: Vec<Vec<f64>>,
    pub image_sigma: f64,
    pub text_slots: Vec<TextSlotSpec>,
    pub audio: AudioToneSpec,
}

/// Centers of mel filters 3, 9, 15 and 21 of the default 8 kHz MFCC
/// front-end, rounded to the nearest DFT bin of a [`CLIP_SAMPLES`] clip.
pub fn default_tones() -> Vec<f64> {
    let bank = MelFilterbank::new(&MfccConfig::default());
    let bin = CLIP_RATE as f64 / CLIP_SAMPLES as f64;
    [3, 9, 15, 21]
        .iter()
        .map(|&k| (bank.center_hz(k) / bin).round() * bin)
        .collect()
}

impl SyntheticSpec {
    /// Four classes; image, text and audio each about 0.75 Bayes-accurate.
    pub fn standard(prototype_seed: u64) -> Self {
        Self::with_noise(
            prototype_seed,
            DEFAULT_IMAGE_SIGMA,
            DEFAULT_TEXT_P_TRUE,
            DEFAULT_AMP_SIGMA,
        )
    }

    pub fn with_noise(prototype_seed: u64, image_sigma: f64, p_true: f64, amp_sigma: f64) -> Self {
        let classes = 4;
        let side = IMAGE_SIDE;
        let mut rng = ChaCha8Rng::seed_from_u64(prototype_seed);
        let image_prototypes = (0..classes)
            .map(|_| smooth_prototype(&mut rng, side))
            .collect();
        let text_slots = SLOT_WORDS
            .iter()
            .map(|(name, words)| {
                let other = (1.0 - p_true) / (words.len() - 1) as f64;
                TextSlotSpec {
                    name: name.to_string(),
                    words: words.iter().map(|w| w.to_string()).collect(),
                    class_probs: (0..classes)
                        .map(|c| {
                            (0..words.len())
                                .map(|w| if w == c { p_true } else { other })
                                .collect()
                        })
                        .collect(),
                }
            })
            .collect();
        let tones = default_tones();
        let audio = AudioToneSpec {
            sample_rate: CLIP_RATE,
            n_samples: CLIP_SAMPLES,
            class_offsets: (0..classes)
                .map(|c| {
                    (0..tones.len())
                        .map(|k| if k == c { DEFAULT_TONE_BOOST } else { 0.0 })
                        .collect()
                })
                .collect(),
            tone_hz: tones,
            base_amplitude: 0.2,
            amp_sigma,
            noise_sigma: 0.01,
        };
        Self {
            classes,
            image_side: side,
            image_prototypes,
            image_sigma,
            text_slots,
            audio,
        }
    }

    /// Near-zero noise and deterministic text: every modality is perfectly
    /// informative.
    pub fn noiseless(prototype_seed: u64) -> Self {
        let mut spec = Self::with_noise(prototype_seed, 1e-9, 1.0, 1e-9);
        spec.audio.noise_sigma = 1e-9;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        let d = self.image_side * self.image_side;
        if self.image_prototypes.len() != self.classes {
            return bad("one image prototype per class required".into());
        }
        for p in &self.image_prototypes {
            let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            if p.len() != d || (norm - 1.0).abs() > 1e-9 {
                return bad(format!(
                    "image prototypes must be unit vectors of length {d}"
                ));
            }
        }
        let a = &self.audio;
        for (name, s) in [
            ("image", self.image_sigma),
            ("amplitude", a.amp_sigma),
            ("audio noise", a.noise_sigma),
        ] {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("{name} sigma must be positive, got {s}"));
            }
        }
        for slot in &self.text_slots {
            if slot.class_probs.len() != self.classes {
                return bad(format!(
                    "slot {} needs one distribution per class",
                    slot.name
                ));
            }
            for row in &slot.class_probs {
                let total: f64 = row.iter().sum();
                if row.len() != slot.words.len()
                    || row.iter().any(|&p| p < 0.0)
                    || (total - 1.0).abs() > 1e-9
                {
                    return bad(format!(
                        "slot {} has an invalid distribution {row:?}",
                        slot.name
                    ));
                }
            }
        }
        if a.sample_rate == 0 || a.n_samples == 0 {
            return bad("audio clips need a sample rate and samples".into());
        }
        let nyquist = a.sample_rate as f64 / 2.0;
        for &f in &a.tone_hz {
            let cycles = f * a.n_samples as f64 / a.sample_rate as f64;
            if cycles.fract() != 0.0 || f <= 0.0 || f >= nyquist {
                return bad(format!(
                    "tone {f} Hz must complete whole cycles per clip and stay below Nyquist"
                ));
            }
        }
        let mut sorted = a.tone_hz.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() != a.tone_hz.len() {
            return bad("tone frequencies must be distinct".into());
        }
        if a.class_offsets.len() != self.classes
            || a.class_offsets.iter().any(|r| r.len() != a.tone_hz.len())
        {
            return bad("one amplitude offset per class and tone required".into());
        }
        Ok(())
    }

    /// Token ids are assigned slot by slot starting at 1; 0 is padding.
    pub fn text_schema(&self) -> TextSchema {
        let mut next = 1;
        TextSchema {
            slots: self
                .text_slots
                .iter()
                .map(|s| TextSlot {
                    name: s.name.clone(),
                    tokens: s
                        .words
                        .iter()
                        .map(|w| {
                            next += 1;
                            (next - 1, w.clone())
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// `table[k][t]`: unit sine of tone `k` at sample `t`.
    fn tone_table(&self, n: usize) -> Vec<Vec<f64>> {
        let rate = self.audio.sample_rate as f64;
        self.audio
            .tone_hz
            .iter()
            .map(|&f| {
                (0..n)
                    .map(|t| (2.0 * PI * f * t as f64 / rate).sin())
                    .collect()
            })
            .collect()
    }
}

/// White noise blurred with a Gaussian of width [`PROTOTYPE_BLUR`]
/// (zero padding), scaled to unit norm.
fn smooth_prototype(rng: &mut ChaCha8Rng, side: usize) -> Vec<f64> {
    let white: Vec<f64> = (0..side * side)
        .map(|_| StandardNormal.sample(&mut *rng))
        .collect();
    let radius = (3.0 * PROTOTYPE_BLUR).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * PROTOTYPE_BLUR * PROTOTYPE_BLUR)).exp())
        .collect();
    let blur = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; side * side];
        for r in 0..side {
            for c in 0..side {
                out[r * side + c] = kernel
                    .iter()
                    .zip(-radius..=radius)
                    .filter_map(|(k, d)| {
                        let (rr, cc) = if horizontal {
                            (r as isize, c as isize + d)
                        } else {
                            (r as isize + d, c as isize)
                        };
                        let inside =
                            (0..side as isize).contains(&rr) && (0..side as isize).contains(&cc);
                        inside.then(|| k * src[rr as usize * side + cc as usize])
                    })
                    .sum();
            }
        }
        out
    };
    let field = blur(&blur(&white, true), false);
    let norm = field.iter().map(|x| x * x).sum::<f64>().sqrt();
    field.into_iter().map(|x| x / norm).collect()
}

fn categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// `n` samples with class counts balanced within one, ids `0..n`.
pub fn gen_synthetic(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n < spec.classes {
        return Err(Error::Validation(format!(
            "need at least {} samples, got {n}",
            spec.classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.classes).collect();
    labels.shuffle(&mut rng);
    let schema = spec.text_schema();
    let pixel_noise = Normal::new(0.0, spec.image_sigma).expect("validated");
    let amp_noise = Normal::new(0.0, spec.audio.amp_sigma).expect("validated");
    let white = Normal::new(0.0, spec.audio.noise_sigma).expect("validated");
    let tones = spec.tone_table(spec.audio.n_samples);

    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let image: Vec<f64> = spec.image_prototypes[c]
                .iter()
                .map(|&p| p + pixel_noise.sample(&mut rng))
                .collect();
            let tokens: Vec<usize> = spec
                .text_slots
                .iter()
                .zip(&schema.slots)
                .map(|(slot, ids)| ids.tokens[categorical(&mut rng, &slot.class_probs[c])].0)
                .collect();
            let a = &spec.audio;
            let amps: Vec<f64> = a.class_offsets[c]
                .iter()
                .map(|off| a.base_amplitude + off + amp_noise.sample(&mut rng))
                .collect();
            let wave: Vec<f64> = (0..a.n_samples)
                .map(|t| {
                    amps.iter()
                        .zip(&tones)
                        .map(|(amp, tone)| amp * tone[t])
                        .sum::<f64>()
                        + white.sample(&mut rng)
                })
                .collect();
            Sample {
                id: i as u64,
                label: c,
                payloads: vec![
                    Some(Payload::Image(image)),
                    Some(Payload::Tokens(tokens)),
                    Some(Payload::Waveform(wave)),
                ],
            }
        })
        .collect();
    Ok(Dataset {
        name: "synthetic".into(),
        classes: spec.classes,
        modalities: vec![ModalityKind::Image, ModalityKind::Text, ModalityKind::Audio],
        image_shape: Some((spec.image_side, spec.image_side)),
        text: Some(schema),
        sample_rate: Some(spec.audio.sample_rate),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleAccuracy {
    /// In the dataset's modality order.
    pub per_modality: Vec<f64>,
    pub joint: f64,
}

/// Amplitude of each tone recovered by projection.
pub fn project_tones(spec: &SyntheticSpec, wave: &[f64]) -> Vec<f64> {
    project_with(&spec.tone_table(wave.len()), wave)
}

fn project_with(tones: &[Vec<f64>], wave: &[f64]) -> Vec<f64> {
    let n = wave.len() as f64;
    tones
        .iter()
        .map(|tone| 2.0 / n * tone.iter().zip(wave).map(|(s, x)| s * x).sum::<f64>())
        .collect()
}

/// Class log-likelihoods (up to a class-independent constant) of one
/// sample's modality `m`.
fn log_likelihoods(
    spec: &SyntheticSpec,
    schema: &TextSchema,
    tones: &[Vec<f64>],
    payload: &Payload,
) -> Result<Vec<f64>> {
    let mismatch = |what: &str| {
        Err(Error::Validation(format!(
            "dataset does not match the spec: {what}"
        )))
    };
    match payload {
        Payload::Image(x) => {
            if x.len() != spec.image_side * spec.image_side {
                return mismatch("image size");
            }
            let s2 = 2.0 * spec.image_sigma * spec.image_sigma;
            Ok(spec
                .image_prototypes
                .iter()
                .map(|p| -p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / s2)
                .collect())
        }
        Payload::Tokens(t) => {
            if t.len() != spec.text_slots.len() {
                return mismatch("text slot count");
            }
            let mut ll = vec![0.0; spec.classes];
            for ((slot, ids), &tok) in spec.text_slots.iter().zip(&schema.slots).zip(t) {
                let w = ids.tokens.iter().position(|x| x.0 == tok).ok_or_else(|| {
                    Error::Validation(format!("token {tok} not in slot {}", slot.name))
                })?;
                for (c, l) in ll.iter_mut().enumerate() {
                    *l += slot.class_probs[c][w].ln();
                }
            }
            Ok(ll)
        }
        Payload::Waveform(x) => {
            let a = &spec.audio;
            if x.len() != a.n_samples {
                return mismatch("clip length");
            }
            let amps = project_with(tones, x);
            let var = a.amp_sigma * a.amp_sigma
                + 2.0 * a.noise_sigma * a.noise_sigma / a.n_samples as f64;
            Ok(a.class_offsets
                .iter()
                .map(|off| {
                    -amps
                        .iter()
                        .zip(off)
                        .map(|(v, o)| (v - a.base_amplitude - o).powi(2))
                        .sum::<f64>()
                        / (2.0 * var)
                })
                .collect())
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Accuracy of the exact likelihood classifier per modality and jointly.
/// Ties go to the lowest class index.
pub fn bayes_oracle(spec: &SyntheticSpec, dataset: &Dataset) -> Result<OracleAccuracy> {
    spec.validate()?;
    if dataset.classes != spec.classes || dataset.is_empty() {
        return Err(Error::Validation(
            "dataset does not match the spec: classes".into(),
        ));
    }
    let schema = spec.text_schema();
    let tones = spec.tone_table(spec.audio.n_samples);
    let m = dataset.modalities.len();
    let mut correct = vec![0usize; m];
    let mut joint = 0usize;
    for s in &dataset.samples {
        let mut total = vec![0.0; spec.classes];
        for (j, p) in s.payloads.iter().enumerate() {
            let Some(p) = p else { continue };
            let ll = log_likelihoods(spec, &schema, &tones, p)?;
            if argmax(&ll) == s.label {
                correct[j] += 1;
            }
            total.iter_mut().zip(&ll).for_each(|(t, l)| *t += l);
        }
        if argmax(&total) == s.label {
            joint += 1;
        }
    }
    let n = dataset.len() as f64;
    Ok(OracleAccuracy {
        per_modality: correct.iter().map(|&c| c as f64 / n).collect(),
        joint: joint as f64 / n,
    })
}
