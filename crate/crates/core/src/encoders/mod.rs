//! Per-modality encoders.
//!
//! Every encoder ends in the same shape: a `t × d_tok` token matrix Φ
//! produced by single-head self-attention. Image and audio encoders first
//! build a `d_lat` latent vector and reshape it row-major into `t` tokens;
//! the text encoder embeds its `t_text` slot tokens directly.

pub mod attention;
pub mod audio;
pub mod image;
pub mod mfcc;
pub mod text;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

pub use attention::{self_attention, SelfAttention, SelfAttentionParams};
pub use audio::AudioEncoder;
pub use image::{ImageEncoder, ImageEncoderConfig};
pub use mfcc::{mfcc, MfccConfig};
pub use text::TextEncoder;

/// Latent width and its token factorization, `d_lat = tokens * d_tok`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenDims {
    pub d_lat: usize,
    pub tokens: usize,
    pub d_tok: usize,
}

impl TokenDims {
    pub fn new(d_lat: usize, tokens: usize) -> Result<Self> {
        if tokens == 0 || d_lat == 0 || d_lat % tokens != 0 {
            return Err(Error::Config(format!(
                "token count {tokens} does not divide latent width {d_lat}"
            )));
        }
        Ok(Self {
            d_lat,
            tokens,
            d_tok: d_lat / tokens,
        })
    }
}

impl Default for TokenDims {
    fn default() -> Self {
        Self {
            d_lat: 128,
            tokens: 8,
            d_tok: 16,
        }
    }
}

/// Vectorized latent feature of one modality for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFeature(pub Vec<f64>);

impl LatentFeature {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `t × d_tok` matrix of latent tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix(Tensor);

impl TokenMatrix {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::shape("token matrix", t.shape(), &[0, 0]));
        }
        Ok(Self(t))
    }

    pub fn tokens(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn d_tok(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Row-major reshape of a latent vector into `tokens` rows.
pub fn tokenize_latent(f: &LatentFeature, tokens: usize) -> Result<TokenMatrix> {
    let dims = TokenDims::new(f.len(), tokens)?;
    TokenMatrix::new(Tensor::new(vec![dims.tokens, dims.d_tok], f.0.clone())?)
}

pub fn detokenize(phi: &TokenMatrix) -> LatentFeature {
    LatentFeature(phi.0.data().to_vec())
}

/// Replaces the rows of `latent[B, ...]` flagged in `masked` with ones.
pub fn mask_rows(tape: &mut Tape, latent: Var, masked: &[bool]) -> Result<Var> {
    let shape = tape.shape(latent).to_vec();
    if shape.first() != Some(&masked.len()) {
        return Err(Error::shape("mask_rows", &shape, &[masked.len()]));
    }
    if !masked.iter().any(|&m| m) {
        return Ok(latent);
    }
    let width = tape.value(latent).len() / masked.len();
    let keep: Vec<f64> = masked
        .iter()
        .flat_map(|&m| std::iter::repeat_n(if m { 0.0 } else { 1.0 }, width))
        .collect();
    let fill: Vec<f64> = keep.iter().map(|k| 1.0 - k).collect();
    let keep = tape.constant(Tensor::new(shape.clone(), keep)?);
    let fill = tape.constant(Tensor::new(shape, fill)?);
    let kept = tape.mul(latent, keep)?;
    tape.add(kept, fill)
}

/// Batched encoder input for one modality.
#[derive(Debug, Clone)]
pub enum ModalityInput {
    /// `[B, 1, H, W]` grayscale images.
    Image(Tensor),
    /// One slot-token sequence per sample.
    Tokens(Vec<Vec<usize>>),
    /// `[B, n_coefficients]` frame-pooled MFCC vectors.
    AudioFeatures(Tensor),
}

impl ModalityInput {
    pub fn batch_size(&self) -> usize {
        match self {
            ModalityInput::Image(t) | ModalityInput::AudioFeatures(t) => t.shape()[0],
            ModalityInput::Tokens(seqs) => seqs.len(),
        }
    }
}

/// Encoder of one modality plus its self-attention block.
#[derive(Debug, Clone)]
pub enum ModalityEncoder {
    Image(ImageEncoder),
    Text(TextEncoder),
    Audio(AudioEncoder),
}

impl ModalityEncoder {
    pub fn attention(&self) -> &SelfAttention {
        match self {
            ModalityEncoder::Image(e) => &e.attention,
            ModalityEncoder::Text(e) => &e.attention,
            ModalityEncoder::Audio(e) => &e.attention,
        }
    }

    pub fn dims(&self) -> TokenDims {
        match self {
            ModalityEncoder::Image(e) => e.dims,
            ModalityEncoder::Text(e) => e.dims,
            ModalityEncoder::Audio(e) => e.dims,
        }
    }

    /// Parameters that training must leave untouched.
    pub fn fixed_params(&self) -> Vec<ParamId> {
        match self {
            ModalityEncoder::Audio(e) => e.fixed_params().to_vec(),
            _ => Vec::new(),
        }
    }

    /// Pre-attention representation, `[B, ...]`; this is what missing-modality
    /// masking overwrites with ones.
    pub fn latent(&self, tape: &mut Tape, bound: &Bound, input: &ModalityInput) -> Result<Var> {
        match (self, input) {
            (ModalityEncoder::Image(e), ModalityInput::Image(px)) => e.latent(tape, bound, px),
            (ModalityEncoder::Text(e), ModalityInput::Tokens(ids)) => e.embed(tape, bound, ids),
            (ModalityEncoder::Audio(e), ModalityInput::AudioFeatures(f)) => {
                e.latent(tape, bound, f)
            }
            _ => Err(Error::Contract("encoder and input modality differ".into())),
        }
    }

    /// Self-attended token matrices Φ, `[B, t, d_tok]`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: &ModalityInput,
        masked: &[bool],
    ) -> Result<Var> {
        let latent = self.latent(tape, bound, input)?;
        let latent = mask_rows(tape, latent, masked)?;
        match self {
            ModalityEncoder::Text(e) => e.attend(tape, bound, latent),
            _ => {
                let dims = self.dims();
                let batch = tape.shape(latent)[0];
                let tokens = tape.reshape(latent, &[batch, dims.tokens, dims.d_tok])?;
                self.attention().forward(tape, bound, tokens)
            }
        }
    }

    /// Forward pass without gradient tracking, one `[t, d_tok]` matrix per sample.
    pub fn encode_values(
        &self,
        store: &ParamStore,
        input: &ModalityInput,
        masked: &[bool],
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let phi = self.encode(&mut tape, &bound, input, masked)?;
        Ok(tape.value(phi).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_six_into_two_rows() {
        let f = LatentFeature(vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let phi = tokenize_latent(&f, 2).unwrap();
        assert_eq!(phi.tensor().row(0), &[0.0, 1.0, 2.0]);
        assert_eq!(phi.tensor().row(1), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn single_token_is_the_whole_vector() {
        let f = LatentFeature(vec![0.5, -1.0, 2.0]);
        let phi = tokenize_latent(&f, 1).unwrap();
        assert_eq!(phi.tokens(), 1);
        assert_eq!(phi.tensor().row(0), f.0.as_slice());
    }

    #[test]
    fn non_divisor_token_count_is_a_config_error() {
        let f = LatentFeature(vec![0.0; 10]);
        assert!(matches!(tokenize_latent(&f, 3), Err(Error::Config(_))));
        assert!(matches!(TokenDims::new(128, 0), Err(Error::Config(_))));
    }

    #[test]
    fn masking_rows_sets_ones_and_is_idempotent() {
        let mut tape = Tape::new();
        let x =
            tape.constant(Tensor::new(vec![2, 3], vec![4.0, -5.0, 6.0, 7.0, 8.0, 9.0]).unwrap());
        let m = mask_rows(&mut tape, x, &[false, true]).unwrap();
        assert_eq!(tape.value(m).data(), &[4.0, -5.0, 6.0, 1.0, 1.0, 1.0]);
        let m2 = mask_rows(&mut tape, m, &[false, true]).unwrap();
        assert_eq!(tape.value(m2), tape.value(m));
        let untouched = mask_rows(&mut tape, x, &[false, false]).unwrap();
        assert_eq!(untouched, x);
    }

    proptest! {
        #[test]
        fn tokenize_round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..12), t in 1usize..4) {
            let n = values.len() * t;
            let f = LatentFeature(values.iter().cycle().take(n).copied().collect());
            let back = detokenize(&tokenize_latent(&f, t).unwrap());
            prop_assert_eq!(back, f);
        }
    }
}
