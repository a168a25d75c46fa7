use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const DEFAULT_HIDDEN: usize = 256;

/// Two-layer perceptron: `input → hidden (ReLU) → classes`.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Classifier {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            input,
            hidden,
            classes,
            w1: store.add(
                format!("{prefix}.w1"),
                init::he(rng, &[input, hidden], input),
            ),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[hidden])),
            w2: store.add(
                format!("{prefix}.w2"),
                init::glorot(rng, &[hidden, classes], hidden, classes),
            ),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[classes])),
        }
    }

    /// Logits `[B, classes]` for `x[B, input]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.input {
            return Err(Error::Config(format!(
                "classifier expects input width {}, got shape {:?}",
                self.input, s
            )));
        }
        let h = tape.linear(x, bound.var(self.w1), Some(bound.var(self.b1)))?;
        let h = tape.relu(h);
        tape.linear(h, bound.var(self.w2), Some(bound.var(self.b2)))
    }
}

/// Uni-modal head: flattens `Φ[B, t, d_tok]` to `[B, t·d_tok]` and classifies.
pub fn uni_classify(tape: &mut Tape, bound: &Bound, phi: Var, head: &Classifier) -> Result<Var> {
    let s = tape.shape(phi).to_vec();
    if s.len() != 3 || s[1] * s[2] != head.input {
        return Err(Error::shape("uni_classify", &s, &[head.input]));
    }
    let flat = tape.reshape(phi, &[s[0], s[1] * s[2]])?;
    head.forward(tape, bound, flat)
}
