use crate::autodiff::{Tape, Var};
use crate::encoders::TokenMatrix;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Plain projections for one target modality's chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainParams {
    /// Query projection of the target modality's self-attention block.
    pub w_q: Tensor,
    /// `(W_K, W_V)` for each of the `N − 1` steps.
    pub steps: Vec<(Tensor, Tensor)>,
}

/// Final chain output Θ and every step's output, last equal to Θ.
#[derive(Debug, Clone, PartialEq)]
pub struct MdaMap {
    pub theta: Tensor,
    pub intermediates: Vec<Tensor>,
}

/// Canonical chain order for `target`: every other modality in declaration order.
pub fn default_order(target: usize, n: usize) -> Vec<usize> {
    (0..n).filter(|&j| j != target).collect()
}

/// Checks that `order` lists every modality except `target` exactly once.
pub fn validate_order(target: usize, n: usize, order: &[usize]) -> Result<()> {
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != default_order(target, n) {
        return Err(Error::Config(format!(
            "chain order {order:?} for modality {target} must be a permutation of the other {} modalities",
            n.saturating_sub(1)
        )));
    }
    Ok(())
}

/// Runs the attention chain for modality `target` over batched token
/// matrices `phis[j]: [B, t, d_tok]`; returns the `N − 1` step outputs.
///
/// Step 1: `Θ¹ = ReLU(Q·K₁ᵀ/√d_tok)·V¹` with `Q = Φ_target·W_Q`,
/// `K_e = Φ_order[e]·W_K^e` and `V^e = Φ_target·W_V^e`; later steps replace
/// `Q` with the previous step's output.
pub fn chain_on_tape(
    tape: &mut Tape,
    target: usize,
    phis: &[Var],
    w_q: Var,
    steps: &[(Var, Var)],
    order: &[usize],
) -> Result<Vec<Var>> {
    let n = phis.len();
    if n < 2 {
        return Err(Error::Contract(format!(
            "attention chain needs at least 2 modalities, got {n}"
        )));
    }
    if target >= n {
        return Err(Error::Contract(format!(
            "target modality {target} out of {n}"
        )));
    }
    validate_order(target, n, order)?;
    if steps.len() != n - 1 {
        return Err(Error::Contract(format!(
            "{} step projections for {} chain steps",
            steps.len(),
            n - 1
        )));
    }
    let shape = tape.shape(phis[target]).to_vec();
    if shape.len() != 3 {
        return Err(Error::shape("mda_chain", &shape, &[0, 0, 0]));
    }
    for &p in phis {
        if tape.shape(p) != shape.as_slice() {
            return Err(Error::shape("mda_chain", &shape, tape.shape(p)));
        }
    }
    let scale = 1.0 / (shape[2] as f64).sqrt();
    let mut theta = tape.linear(phis[target], w_q, None)?;
    let mut out = Vec::with_capacity(n - 1);
    for (&other, &(w_k, w_v)) in order.iter().zip(steps) {
        let k = tape.linear(phis[other], w_k, None)?;
        let v = tape.linear(phis[target], w_v, None)?;
        let scores = tape.batch_matmul(theta, k, true)?;
        let scores = tape.scale(scores, scale);
        let gate = tape.relu(scores);
        theta = tape.batch_matmul(gate, v, false)?;
        out.push(theta);
    }
    Ok(out)
}

/// Single-sample chain over plain token matrices.
pub fn mda_chain(
    target: usize,
    phi_all: &[TokenMatrix],
    params: &ChainParams,
    order: &[usize],
) -> Result<MdaMap> {
    let mut tape = Tape::new();
    let phis = phi_all
        .iter()
        .map(|p| Ok(tape.constant(p.tensor().reshape(&[1, p.tokens(), p.d_tok()])?)))
        .collect::<Result<Vec<_>>>()?;
    let w_q = tape.constant(params.w_q.clone());
    let steps: Vec<(Var, Var)> = params
        .steps
        .iter()
        .map(|(k, v)| (tape.constant(k.clone()), tape.constant(v.clone())))
        .collect();
    let outs = chain_on_tape(&mut tape, target, &phis, w_q, &steps, order)?;
    let intermediates = outs
        .iter()
        .map(|&v| {
            let s = tape.shape(v);
            tape.value(v).reshape(&[s[1], s[2]])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MdaMap {
        theta: intermediates.last().expect("n >= 2").clone(),
        intermediates,
    })
}
