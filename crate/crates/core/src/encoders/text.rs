use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::params::{Bound, ParamId, ParamStore};

use super::attention::SelfAttention;
use super::TokenDims;

/// Token id used to pad short sequences.
pub const PAD: usize = 0;

/// Token embedding, one self-attention layer and, when the sequence length
/// differs from the shared token count, a learned token-axis alignment.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub dims: TokenDims,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub embedding: ParamId,
    pub attention: SelfAttention,
    pub align: Option<ParamId>,
}

impl TextEncoder {
    pub fn new(
        store: &mut ParamStore,
        vocab_size: usize,
        seq_len: usize,
        dims: TokenDims,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if vocab_size < 2 || seq_len == 0 {
            return Err(Error::Config(format!(
                "text encoder needs vocab >= 2 and a positive sequence length, got {vocab_size} and {seq_len}"
            )));
        }
        let embedding = store.add(
            "text.embedding",
            init::normal(rng, &[vocab_size, dims.d_tok], 1.0),
        );
        let attention = SelfAttention::new(store, "text.attn", dims.d_tok, rng);
        let align = (seq_len != dims.tokens).then(|| {
            store.add(
                "text.align",
                init::glorot(rng, &[dims.tokens, seq_len], seq_len, dims.tokens),
            )
        });
        Ok(Self {
            dims,
            vocab_size,
            seq_len,
            embedding,
            attention,
            align,
        })
    }

    /// Pads with [`PAD`] or truncates to the encoder's sequence length.
    pub fn fit_length(&self, ids: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = ids.iter().copied().take(self.seq_len).collect();
        out.resize(self.seq_len, PAD);
        out
    }

    /// Embedded sequences `[B, seq_len, d_tok]`.
    pub fn embed(&self, tape: &mut Tape, bound: &Bound, seqs: &[Vec<usize>]) -> Result<Var> {
        let mut flat = Vec::with_capacity(seqs.len() * self.seq_len);
        for seq in seqs {
            if let Some(bad) = seq.iter().find(|&&id| id >= self.vocab_size) {
                return Err(Error::Validation(format!(
                    "token id {bad} outside vocabulary of {}",
                    self.vocab_size
                )));
            }
            flat.extend(self.fit_length(seq));
        }
        let rows = tape.gather_rows(bound.var(self.embedding), &flat)?;
        tape.reshape(rows, &[seqs.len(), self.seq_len, self.dims.d_tok])
    }

    /// Self-attention over embedded sequences, aligned to `[B, t, d_tok]`.
    pub fn attend(&self, tape: &mut Tape, bound: &Bound, embedded: Var) -> Result<Var> {
        let attended = self.attention.forward(tape, bound, embedded)?;
        match self.align {
            Some(a) => tape.shared_left_matmul(bound.var(a), attended),
            None => Ok(attended),
        }
    }
}
