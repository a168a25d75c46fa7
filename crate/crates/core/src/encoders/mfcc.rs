//! Mel-frequency cepstral coefficients.
//!
//! Pipeline: pre-emphasis, symmetric Hann-windowed framing, power spectrum
//! `|X[k]|²` of the zero-padded frame (no normalization), triangular mel
//! filters on the HTK scale spanning 0 Hz to Nyquist, natural log of the
//! filter energies floored at [`LOG_FLOOR`], orthonormal DCT-II truncated to
//! the first `n_coefficients`.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Filter energies below this are clamped before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfccConfig {
    pub sample_rate: u32,
    pub frame_length: usize,
    pub hop_length: usize,
    pub fft_size: usize,
    pub n_mel_filters: usize,
    pub n_coefficients: usize,
    pub pre_emphasis: f64,
}

impl MfccConfig {
    /// 25 ms frames, 10 ms hop, 26 filters, 13 coefficients, pre-emphasis 0.97.
    pub fn for_sample_rate(sample_rate: u32) -> Self {
        let frame_length = (0.025 * sample_rate as f64).round() as usize;
        Self {
            sample_rate,
            frame_length,
            hop_length: (0.010 * sample_rate as f64).round() as usize,
            fft_size: frame_length.next_power_of_two(),
            n_mel_filters: 26,
            n_coefficients: 13,
            pre_emphasis: 0.97,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.sample_rate == 0 || self.frame_length == 0 || self.hop_length == 0 {
            return bad(format!(
                "sample rate, frame and hop must be positive: {self:?}"
            ));
        }
        if self.frame_length > self.fft_size {
            return bad(format!(
                "frame_length {} exceeds fft_size {}",
                self.frame_length, self.fft_size
            ));
        }
        if self.n_coefficients == 0 || self.n_coefficients > self.n_mel_filters {
            return bad(format!(
                "n_coefficients {} must be in 1..={}",
                self.n_coefficients, self.n_mel_filters
            ));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return bad(format!("pre_emphasis {} outside [0, 1)", self.pre_emphasis));
        }
        Ok(())
    }

    pub fn frame_count(&self, samples: usize) -> usize {
        if samples < self.frame_length {
            0
        } else {
            1 + (samples - self.frame_length) / self.hop_length
        }
    }
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self::for_sample_rate(8000)
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over the `fft_size / 2 + 1` power bins.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `(left, center, right)` edge frequencies in Hz, one per filter.
    pub edges: Vec<(f64, f64, f64)>,
    /// `weights[filter][bin]`
    pub weights: Vec<Vec<f64>>,
}

impl MelFilterbank {
    pub fn new(cfg: &MfccConfig) -> Self {
        let nyquist = cfg.sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let points: Vec<f64> = (0..cfg.n_mel_filters + 2)
            .map(|i| mel_to_hz(top * i as f64 / (cfg.n_mel_filters + 1) as f64))
            .collect();
        let bins = cfg.fft_size / 2 + 1;
        let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
        let mut edges = Vec::with_capacity(cfg.n_mel_filters);
        let mut weights = Vec::with_capacity(cfg.n_mel_filters);
        for m in 0..cfg.n_mel_filters {
            let (l, c, r) = (points[m], points[m + 1], points[m + 2]);
            edges.push((l, c, r));
            weights.push(
                (0..bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f > l && f <= c {
                            (f - l) / (c - l)
                        } else if f > c && f < r {
                            (r - f) / (r - c)
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            );
        }
        Self { edges, weights }
    }

    pub fn center_hz(&self, filter: usize) -> f64 {
        self.edges[filter].1
    }
}

/// Log mel filter energies, `frames × n_mel_filters`.
pub fn log_mel_energies(waveform: &[f64], cfg: &MfccConfig) -> Result<Tensor> {
    cfg.validate()?;
    if waveform.len() < cfg.frame_length {
        return Err(Error::Validation(format!(
            "waveform of {} samples is shorter than one frame ({})",
            waveform.len(),
            cfg.frame_length
        )));
    }
    let emphasized: Vec<f64> = waveform
        .iter()
        .enumerate()
        .map(|(n, &x)| {
            if n == 0 {
                x
            } else {
                x - cfg.pre_emphasis * waveform[n - 1]
            }
        })
        .collect();
    let window = hann(cfg.frame_length);
    let bank = MelFilterbank::new(cfg);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let frames = cfg.frame_count(waveform.len());
    let bins = cfg.fft_size / 2 + 1;

    let mut out = Vec::with_capacity(frames * cfg.n_mel_filters);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    for f in 0..frames {
        let start = f * cfg.hop_length;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, (&x, &w)) in emphasized[start..start + cfg.frame_length]
            .iter()
            .zip(&window)
            .enumerate()
        {
            buf[i].re = x * w;
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..bins].iter().map(|c| c.norm_sqr()).collect();
        for filter in &bank.weights {
            let e: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
            out.push(e.max(LOG_FLOOR).ln());
        }
    }
    Tensor::new(vec![frames, cfg.n_mel_filters], out)
}

/// MFCC matrix, `frames × n_coefficients`.
pub fn mfcc(waveform: &[f64], cfg: &MfccConfig) -> Result<Tensor> {
    let energies = log_mel_energies(waveform, cfg)?;
    let n = cfg.n_mel_filters;
    let basis = dct2_basis(n, cfg.n_coefficients);
    let frames = energies.shape()[0];
    let mut out = Vec::with_capacity(frames * cfg.n_coefficients);
    for f in 0..frames {
        let row = energies.row(f);
        for k in 0..cfg.n_coefficients {
            out.push(
                basis[k * n..(k + 1) * n]
                    .iter()
                    .zip(row)
                    .map(|(b, e)| b * e)
                    .sum(),
            );
        }
    }
    Tensor::new(vec![frames, cfg.n_coefficients], out)
}

/// Mean of every MFCC column over frames.
pub fn pooled_mfcc(waveform: &[f64], cfg: &MfccConfig) -> Result<Vec<f64>> {
    let m = mfcc(waveform, cfg)?;
    let (frames, n) = (m.shape()[0], m.shape()[1]);
    let mut mean = vec![0.0; n];
    for f in 0..frames {
        mean.iter_mut().zip(m.row(f)).for_each(|(a, v)| *a += v);
    }
    mean.iter_mut().for_each(|a| *a /= frames as f64);
    Ok(mean)
}

/// Symmetric Hann window.
fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Rows of the orthonormal DCT-II matrix, `keep × n`.
fn dct2_basis(n: usize, keep: usize) -> Vec<f64> {
    let mut basis = Vec::with_capacity(keep * n);
    for k in 0..keep {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            basis.push(scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos());
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_at_8khz() {
        let c = MfccConfig::default();
        assert_eq!((c.frame_length, c.hop_length, c.fft_size), (200, 80, 256));
        assert_eq!((c.n_mel_filters, c.n_coefficients), (26, 13));
        c.validate().unwrap();
    }

    #[test]
    fn config_invariants_are_enforced() {
        let base = MfccConfig::default();
        let cases = [
            MfccConfig {
                frame_length: 300,
                ..base
            },
            MfccConfig {
                n_coefficients: 27,
                ..base
            },
            MfccConfig {
                pre_emphasis: 1.0,
                ..base
            },
            MfccConfig {
                pre_emphasis: -0.1,
                ..base
            },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 100.0, 1000.0, 3999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn too_short_waveform_is_rejected() {
        let c = MfccConfig::default();
        assert!(matches!(
            mfcc(&vec![0.0; 199], &c),
            Err(Error::Validation(_))
        ));
        assert_eq!(mfcc(&vec![0.0; 200], &c).unwrap().shape(), &[1, 13]);
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        let n = 26;
        let b = dct2_basis(n, n);
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|t| b[i * n + t] * b[j * n + t]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }
}
