use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

use super::TokenMatrix;

/// Plain `d_tok × d_tok` projections of one self-attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttentionParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

impl SelfAttentionParams {
    pub fn validate(&self, d_tok: usize) -> Result<()> {
        for (name, w) in [("w_q", &self.w_q), ("w_k", &self.w_k), ("w_v", &self.w_v)] {
            if w.shape() != [d_tok, d_tok] {
                return Err(Error::shape("self_attention", w.shape(), &[d_tok, d_tok]));
            }
            if !w.is_finite() {
                return Err(Error::Validation(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }
}

/// `softmax_rows(Q·Kᵀ / √d_tok) · V` with `Q = Φ·W_Q`, `K = Φ·W_K`, `V = Φ·W_V`.
pub fn self_attention(phi: &TokenMatrix, params: &SelfAttentionParams) -> Result<TokenMatrix> {
    params.validate(phi.d_tok())?;
    let mut tape = Tape::new();
    let x = tape.constant(phi.tensor().reshape(&[1, phi.tokens(), phi.d_tok()])?);
    let [wq, wk, wv] = [&params.w_q, &params.w_k, &params.w_v].map(|w| tape.constant(w.clone()));
    let out = attend(&mut tape, x, wq, wk, wv)?;
    TokenMatrix::new(tape.value(out).reshape(&[phi.tokens(), phi.d_tok()])?)
}

/// Self-attention block whose projections live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub d_tok: usize,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, prefix: &str, d_tok: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut proj = |name: &str| {
            store.add(
                format!("{prefix}.{name}"),
                init::glorot(rng, &[d_tok, d_tok], d_tok, d_tok),
            )
        };
        Self {
            w_q: proj("w_q"),
            w_k: proj("w_k"),
            w_v: proj("w_v"),
            d_tok,
        }
    }

    pub fn params(&self, store: &ParamStore) -> SelfAttentionParams {
        SelfAttentionParams {
            w_q: store.get(self.w_q).clone(),
            w_k: store.get(self.w_k).clone(),
            w_v: store.get(self.w_v).clone(),
        }
    }

    /// Attends over `tokens[B, t, d_tok]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, tokens: Var) -> Result<Var> {
        attend(
            tape,
            tokens,
            bound.var(self.w_q),
            bound.var(self.w_k),
            bound.var(self.w_v),
        )
    }
}

fn attend(tape: &mut Tape, x: Var, wq: Var, wk: Var, wv: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::shape("self_attention", &shape, tape.shape(wq)));
    }
    let q = tape.linear(x, wq, None)?;
    let k = tape.linear(x, wk, None)?;
    let v = tape.linear(x, wv, None)?;
    let scores = tape.batch_matmul(q, k, true)?;
    let scores = tape.scale(scores, 1.0 / (shape[2] as f64).sqrt());
    let attn = tape.softmax_last(scores)?;
    tape.batch_matmul(attn, v, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrong_projection_shape_is_rejected() {
        let phi = TokenMatrix::new(Tensor::zeros(&[2, 3])).unwrap();
        let p = SelfAttentionParams {
            w_q: Tensor::eye(3),
            w_k: Tensor::eye(2),
            w_v: Tensor::eye(3),
        };
        assert!(self_attention(&phi, &p).is_err());
    }
}
