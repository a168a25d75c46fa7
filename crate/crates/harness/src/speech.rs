//! Formant synthesizer for spoken digits, written with Free Spoken Digit
//! file names so the avMNIST loader reads it like recorded speech.
//!
//! Each digit is a phoneme sequence. Voiced phonemes drive a glottal pulse
//! train through three cascaded resonators; fricatives and bursts filter
//! white noise. Speakers differ in pitch and vocal-tract length, takes in
//! tempo, formant targets, pitch and background noise.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use mda_core::data::wav::{write_wav_pcm16, Waveform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{HarnessError, Result};
use crate::model::derive_seed;

pub const SPEECH_RATE: u32 = 8000;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phone {
    /// Formants at the start and end of the segment.
    Vowel([f64; 3], [f64; 3]),
    Nasal,
    /// Noise centre and bandwidth, and whether voicing is mixed in.
    Fricative(f64, f64, bool),
    /// Closure followed by a noise burst at the given centre.
    Stop(f64),
}

use Phone::*;

const IH: Phone = Vowel([400.0, 1900.0, 2550.0], [400.0, 1900.0, 2550.0]);
const R: Phone = Vowel([350.0, 1300.0, 1700.0], [350.0, 1300.0, 1700.0]);
const OW: Phone = Vowel([550.0, 950.0, 2400.0], [420.0, 780.0, 2400.0]);
const W: Phone = Vowel([300.0, 700.0, 2200.0], [300.0, 700.0, 2200.0]);
const AH: Phone = Vowel([650.0, 1200.0, 2500.0], [650.0, 1200.0, 2500.0]);
const UW: Phone = Vowel([320.0, 900.0, 2250.0], [300.0, 850.0, 2250.0]);
const IY: Phone = Vowel([280.0, 2250.0, 2900.0], [280.0, 2300.0, 2950.0]);
const AO: Phone = Vowel([590.0, 880.0, 2540.0], [590.0, 880.0, 2540.0]);
const AY: Phone = Vowel([750.0, 1200.0, 2500.0], [350.0, 2100.0, 2700.0]);
const EH: Phone = Vowel([550.0, 1800.0, 2500.0], [550.0, 1800.0, 2500.0]);
const EY: Phone = Vowel([500.0, 1900.0, 2500.0], [300.0, 2250.0, 2800.0]);
const N: Phone = Nasal;
const Z: Phone = Fricative(3400.0, 900.0, true);
const V: Phone = Fricative(1500.0, 2000.0, true);
const S: Phone = Fricative(3500.0, 700.0, false);
const F: Phone = Fricative(2500.0, 2500.0, false);
const TH: Phone = Fricative(2800.0, 2200.0, false);
const T: Phone = Stop(3300.0);
const K: Phone = Stop(1900.0);

/// Phonemes of "zero" through "nine".
fn digit_phones(digit: usize) -> &'static [Phone] {
    match digit {
        0 => &[Z, IH, R, OW],
        1 => &[W, AH, N],
        2 => &[T, UW],
        3 => &[TH, R, IY],
        4 => &[F, AO, R],
        5 => &[F, AY, V],
        6 => &[S, IH, K, S],
        7 => &[S, EH, V, AH, N],
        8 => &[EY, T],
        _ => &[N, AY, N],
    }
}

fn duration_ms(p: Phone) -> f64 {
    match p {
        Vowel(..) => 150.0,
        Nasal => 80.0,
        Fricative(..) => 90.0,
        Stop(_) => 60.0,
    }
}

/// Pitch and vocal-tract scale of a synthetic speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct Speaker {
    pub name: String,
    pub pitch_hz: f64,
    pub formant_scale: f64,
}

pub fn default_speakers() -> Vec<Speaker> {
    [
        ("amber", 190.0, 1.12),
        ("basil", 115.0, 1.0),
        ("cedar", 150.0, 1.06),
    ]
    .into_iter()
    .map(|(name, pitch_hz, formant_scale)| Speaker {
        name: name.into(),
        pitch_hz,
        formant_scale,
    })
    .collect()
}

/// Per-take variability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TakeJitter {
    /// Relative std of the speaking rate.
    pub tempo: f64,
    /// Relative std of every formant target.
    pub formant: f64,
    /// Relative std of the pitch.
    pub pitch: f64,
    /// Std of additive white noise relative to the clip's peak.
    pub noise: f64,
}

impl Default for TakeJitter {
    fn default() -> Self {
        Self {
            tempo: 0.15,
            formant: 0.12,
            pitch: 0.1,
            noise: 0.08,
        }
    }
}

/// Second-order resonator with per-sample retuning.
#[derive(Default)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bw: f64) -> f64 {
        let t = 1.0 / SPEECH_RATE as f64;
        let c = -(-2.0 * PI * bw * t).exp();
        let b = 2.0 * (-PI * bw * t).exp() * (2.0 * PI * freq * t).cos();
        let a = 1.0 - b - c;
        let y = a * x + b * self.y1 + c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

const BANDWIDTHS: [f64; 3] = [80.0, 110.0, 160.0];
const NASAL: [f64; 3] = [250.0, 1100.0, 2500.0];

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// One utterance of `digit`, deterministic in `(seed, digit, speaker, take)`.
pub fn synthesize_digit(
    digit: usize,
    speaker: &Speaker,
    take: u32,
    jitter: &TakeJitter,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        seed,
        &format!("speech/{digit}/{}/{take}", speaker.name),
    ));
    let tempo = (1.0 + jitter.tempo * normal(&mut rng)).clamp(0.6, 1.5);
    let pitch = speaker.pitch_hz * (1.0 + jitter.pitch * normal(&mut rng)).clamp(0.7, 1.3);
    let nyquist = SPEECH_RATE as f64 / 2.0 - 100.0;
    let jit = |f: f64, rng: &mut ChaCha8Rng| {
        (f * speaker.formant_scale * (1.0 + jitter.formant * normal(rng))).clamp(150.0, nyquist)
    };

    let lead = (0.05 * SPEECH_RATE as f64) as usize;
    let mut out = vec![0.0; lead];
    let mut formants = [
        Resonator::default(),
        Resonator::default(),
        Resonator::default(),
    ];
    let mut hiss = Resonator::default();
    let mut phase = 0.0;
    for &p in digit_phones(digit) {
        let len = (duration_ms(p) * tempo * SPEECH_RATE as f64 / 1000.0) as usize;
        let ramp = (len / 6).max(1);
        let (start, end) = match p {
            Vowel(a, b) => {
                let s = a.map(|f| jit(f, &mut rng));
                let e = if a == b {
                    s
                } else {
                    b.map(|f| jit(f, &mut rng))
                };
                (s, e)
            }
            _ => {
                let s = NASAL.map(|f| jit(f, &mut rng));
                (s, s)
            }
        };
        let centre = match p {
            Fricative(c, _, _) | Stop(c) => jit(c / speaker.formant_scale, &mut rng),
            _ => 0.0,
        };
        for i in 0..len {
            let frac = i as f64 / len as f64;
            let env = (i.min(len - 1 - i) as f64 / ramp as f64).min(1.0);
            let noise = normal(&mut rng);
            phase += pitch * (1.0 + 0.01 * normal(&mut rng)) / SPEECH_RATE as f64;
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            let voiced = |formants: &mut [Resonator; 3], x: f64| {
                (0..3).fold(x, |acc, k| {
                    let f = start[k] + (end[k] - start[k]) * frac;
                    formants[k].step(acc, f, BANDWIDTHS[k])
                })
            };
            let v = match p {
                Vowel(..) => voiced(&mut formants, pulse),
                Nasal => 0.3 * voiced(&mut formants, pulse),
                Fricative(_, bw, with_voice) => {
                    let h = 0.5 * hiss.step(noise, centre, bw);
                    if with_voice {
                        h + 0.3 * voiced(&mut formants, pulse)
                    } else {
                        h
                    }
                }
                Stop(_) => {
                    if frac < 0.6 {
                        0.0
                    } else {
                        0.8 * hiss.step(noise, centre, 1200.0)
                    }
                }
            };
            out.push(env * v);
        }
    }
    out.extend(std::iter::repeat_n(0.0, lead));

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    for v in &mut out {
        *v = 0.6 * *v / peak + 0.6 * jitter.noise * normal(&mut rng);
    }
    out
}

/// Writes `digits x speakers x takes` clips named `<digit>_<speaker>_<take>.wav`
/// into `dir` and returns their paths in write order.
pub fn write_spoken_digits(
    dir: &Path,
    speakers: &[Speaker],
    takes: u32,
    jitter: &TakeJitter,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut paths = Vec::new();
    for digit in 0..10 {
        for s in speakers {
            for take in 0..takes {
                let path = dir.join(format!("{digit}_{}_{take}.wav", s.name));
                let wave = Waveform {
                    sample_rate: SPEECH_RATE,
                    samples: synthesize_digit(digit, s, take, jitter, seed),
                };
                write_wav_pcm16(&path, &wave)?;
                paths.push(path);
            }
        }
    }
    Ok(paths)
}
