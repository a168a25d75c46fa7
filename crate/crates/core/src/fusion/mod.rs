//! Cross-modal attention chain, modality weights and fusion heads.

pub mod chain;
pub mod classifier;

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::encoders::TokenDims;
use crate::error::{Error, Result};
use crate::init;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

pub use crate::autodiff::MASS_FLOOR;
pub use chain::{chain_on_tape, default_order, mda_chain, validate_order, ChainParams, MdaMap};
pub use classifier::{uni_classify, Classifier, DEFAULT_HIDDEN};

/// How chain outputs are turned into modality weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    /// `w_i = Σ|Θ_i| / Σ_j Σ|Θ_j|`, always in `[0, 1]`.
    #[default]
    Abs,
    /// `w_i = ΣΘ_i / Σ_j ΣΘ_j`; may leave `[0, 1]` when Θ has negative mass.
    Raw,
}

/// What the fusion classifier sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionInput {
    /// Token-pooled Θ of every modality, concatenated (`N·d_tok` wide).
    #[default]
    ConcatTheta,
    /// Weight-averaged token-pooled Θ (`d_tok` wide).
    WeightedSum,
}

/// Parameter-free fusion of token-pooled Φ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineMode {
    Addition,
    Maximum,
    Concatenate,
}

macro_rules! str_enum {
    ($ty:ty, $what:literal, $($name:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let name = match self {
                    $(v if *v == $variant => $name,)+
                    _ => unreachable!(),
                };
                f.write_str(name)
            }
        }
    };
}

str_enum!(WeightMode, "weight mode", "abs" => WeightMode::Abs, "raw" => WeightMode::Raw);
str_enum!(
    FusionInput,
    "fusion input",
    "concat-theta" => FusionInput::ConcatTheta,
    "weighted-sum" => FusionInput::WeightedSum,
);
str_enum!(
    BaselineMode,
    "baseline mode",
    "addition" => BaselineMode::Addition,
    "maximum" => BaselineMode::Maximum,
    "concatenate" => BaselineMode::Concatenate,
);

/// Normalized per-modality decision weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MdaWeights {
    pub w: Vec<f64>,
    pub mode: WeightMode,
}

/// Weights from chain outputs; uniform when the total mass has magnitude
/// below [`MASS_FLOOR`].
pub fn mda_weights(thetas: &[Tensor], mode: WeightMode) -> MdaWeights {
    let mut w: Vec<f64> = thetas
        .iter()
        .map(|t| match mode {
            WeightMode::Abs => t.data().iter().map(|v| v.abs()).sum(),
            WeightMode::Raw => t.sum(),
        })
        .collect();
    crate::autodiff::normalize_row(&mut w);
    MdaWeights { w, mode }
}

/// Weights `[B, N]` from batched chain outputs `thetas[i]: [B, t, d]`.
pub fn weights_on_tape(tape: &mut Tape, thetas: &[Var], mode: WeightMode) -> Result<Var> {
    let masses = thetas
        .iter()
        .map(|&t| {
            let t = match mode {
                WeightMode::Abs => tape.abs(t),
                WeightMode::Raw => t,
            };
            tape.sum_per_row(t)
        })
        .collect::<Result<Vec<_>>>()?;
    let stacked = tape.concat_last(&masses)?;
    tape.normalize_mass(stacked)
}

/// Fusion-classifier input from chain outputs `thetas[i]: [B, t, d]` and
/// weights `[B, N]`.
pub fn fusion_features(
    tape: &mut Tape,
    thetas: &[Var],
    weights: Var,
    input: FusionInput,
) -> Result<Var> {
    let pooled = thetas
        .iter()
        .map(|&t| tape.mean_axis1(t))
        .collect::<Result<Vec<_>>>()?;
    let cat = tape.concat_last(&pooled)?;
    match input {
        FusionInput::ConcatTheta => Ok(cat),
        FusionInput::WeightedSum => {
            let (batch, n) = (tape.shape(cat)[0], thetas.len());
            let d = tape.shape(cat)[1] / n;
            let stack = tape.reshape(cat, &[batch, n, d])?;
            let w = tape.reshape(weights, &[batch, 1, n])?;
            let mixed = tape.batch_matmul(w, stack, false)?;
            tape.reshape(mixed, &[batch, d])
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdaConfig {
    pub n_modalities: usize,
    pub dims: TokenDims,
    pub classes: usize,
    pub hidden: usize,
    pub fusion_input: FusionInput,
    pub weight_mode: WeightMode,
    /// Chain order per target modality; `None` means [`default_order`].
    pub orders: Option<Vec<Vec<usize>>>,
}

impl MdaConfig {
    pub fn classifier_width(&self) -> usize {
        match self.fusion_input {
            FusionInput::ConcatTheta => self.n_modalities * self.dims.d_tok,
            FusionInput::WeightedSum => self.dims.d_tok,
        }
    }
}

/// Forward products of an [`MdaModel`].
#[derive(Debug, Clone)]
pub struct MdaOutput {
    pub logits: Var,
    /// `[B, N]`
    pub weights: Var,
    /// Per modality, the chain step outputs; the last entry is Θ. For a
    /// single modality this is Φ itself.
    pub maps: Vec<Vec<Var>>,
}

impl MdaOutput {
    pub fn thetas(&self) -> Vec<Var> {
        self.maps
            .iter()
            .map(|m| *m.last().expect("non-empty"))
            .collect()
    }
}

/// Chain projections for every target modality plus the fusion classifier.
#[derive(Debug, Clone)]
pub struct MdaModel {
    pub config: MdaConfig,
    pub orders: Vec<Vec<usize>>,
    /// `chains[i][e] = (W_K, W_V)`
    pub chains: Vec<Vec<(ParamId, ParamId)>>,
    pub classifier: Classifier,
}

impl MdaModel {
    pub fn new(store: &mut ParamStore, config: MdaConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let n = config.n_modalities;
        if n == 0 || config.classes < 2 {
            return Err(Error::Config(format!(
                "need at least one modality and two classes, got {n} and {}",
                config.classes
            )));
        }
        let orders = match &config.orders {
            Some(o) => {
                if o.len() != n {
                    return Err(Error::Config(format!(
                        "{} chain orders for {n} modalities",
                        o.len()
                    )));
                }
                for (i, order) in o.iter().enumerate() {
                    validate_order(i, n, order)?;
                }
                o.clone()
            }
            None => (0..n).map(|i| default_order(i, n)).collect(),
        };
        let d = config.dims.d_tok;
        let chains = (0..n)
            .map(|i| {
                (0..n.saturating_sub(1))
                    .map(|e| {
                        let k = store.add(
                            format!("mda.chain.{i}.{e}.w_k"),
                            init::glorot(rng, &[d, d], d, d),
                        );
                        let v = store.add(
                            format!("mda.chain.{i}.{e}.w_v"),
                            init::glorot(rng, &[d, d], d, d),
                        );
                        (k, v)
                    })
                    .collect()
            })
            .collect();
        let classifier = Classifier::new(
            store,
            "mda.head",
            config.classifier_width(),
            config.hidden,
            config.classes,
            rng,
        );
        Ok(Self {
            config,
            orders,
            chains,
            classifier,
        })
    }

    /// `phis[i]: [B, t, d_tok]`; `queries[i]` is modality `i`'s
    /// self-attention query projection.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        phis: &[Var],
        queries: &[Var],
    ) -> Result<MdaOutput> {
        let n = self.config.n_modalities;
        if phis.len() != n || queries.len() != n {
            return Err(Error::Contract(format!(
                "model has {n} modalities, got {} inputs and {} queries",
                phis.len(),
                queries.len()
            )));
        }
        let maps = if n == 1 {
            vec![vec![phis[0]]]
        } else {
            (0..n)
                .map(|i| {
                    let steps: Vec<(Var, Var)> = self.chains[i]
                        .iter()
                        .map(|&(k, v)| (bound.var(k), bound.var(v)))
                        .collect();
                    chain_on_tape(tape, i, phis, queries[i], &steps, &self.orders[i])
                })
                .collect::<Result<Vec<_>>>()?
        };
        let thetas: Vec<Var> = maps.iter().map(|m| *m.last().expect("non-empty")).collect();
        let weights = weights_on_tape(tape, &thetas, self.config.weight_mode)?;
        let features = fusion_features(tape, &thetas, weights, self.config.fusion_input)?;
        let logits = self.classifier.forward(tape, bound, features)?;
        Ok(MdaOutput {
            logits,
            weights,
            maps,
        })
    }
}

/// Fusion classifier logits for single-sample chain outputs.
pub fn fuse_and_classify(
    maps: &[MdaMap],
    weights: &MdaWeights,
    head: &Classifier,
    store: &ParamStore,
    input: FusionInput,
) -> Result<Vec<f64>> {
    if weights.w.len() != maps.len() {
        return Err(Error::Config(format!(
            "{} weights for {} maps",
            weights.w.len(),
            maps.len()
        )));
    }
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let thetas = maps
        .iter()
        .map(|m| {
            let s = m.theta.shape();
            Ok(tape.constant(m.theta.reshape(&[1, s[0], s[1]])?))
        })
        .collect::<Result<Vec<_>>>()?;
    let w = tape.constant(Tensor::new(vec![1, maps.len()], weights.w.clone())?);
    let features = fusion_features(&mut tape, &thetas, w, input)?;
    let logits = head.forward(&mut tape, &bound, features)?;
    Ok(tape.value(logits).data().to_vec())
}

/// Baseline fusion head over token-pooled Φ.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub mode: BaselineMode,
    pub n_modalities: usize,
    pub classifier: Classifier,
}

impl BaselineModel {
    pub fn input_width(mode: BaselineMode, n_modalities: usize, d_tok: usize) -> usize {
        match mode {
            BaselineMode::Concatenate => n_modalities * d_tok,
            BaselineMode::Addition | BaselineMode::Maximum => d_tok,
        }
    }

    pub fn new(
        store: &mut ParamStore,
        mode: BaselineMode,
        n_modalities: usize,
        dims: TokenDims,
        classes: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if n_modalities == 0 || classes < 2 {
            return Err(Error::Config(
                "baseline needs a modality and two classes".into(),
            ));
        }
        let width = Self::input_width(mode, n_modalities, dims.d_tok);
        Ok(Self {
            mode,
            n_modalities,
            classifier: Classifier::new(store, "baseline.head", width, hidden, classes, rng),
        })
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, phis: &[Var]) -> Result<Var> {
        if phis.len() != self.n_modalities {
            return Err(Error::Contract(format!(
                "baseline has {} modalities, got {}",
                self.n_modalities,
                phis.len()
            )));
        }
        let features = baseline_features(tape, phis, self.mode)?;
        self.classifier.forward(tape, bound, features)
    }
}

/// Fused classifier input for a baseline mode from `phis[i]: [B, t, d]`.
pub fn baseline_features(tape: &mut Tape, phis: &[Var], mode: BaselineMode) -> Result<Var> {
    let pooled = phis
        .iter()
        .map(|&p| tape.mean_axis1(p))
        .collect::<Result<Vec<_>>>()?;
    let (first, rest) = pooled
        .split_first()
        .ok_or_else(|| Error::Contract("baseline fusion of zero modalities".into()))?;
    match mode {
        BaselineMode::Concatenate => tape.concat_last(&pooled),
        BaselineMode::Addition => rest.iter().try_fold(*first, |acc, &p| tape.add(acc, p)),
        BaselineMode::Maximum => rest.iter().try_fold(*first, |acc, &p| tape.maximum(acc, p)),
    }
}

/// Single-sample baseline logits over plain token matrices.
pub fn baseline_fuse(
    mode: BaselineMode,
    phi_all: &[crate::encoders::TokenMatrix],
    head: &Classifier,
    store: &ParamStore,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let phis = phi_all
        .iter()
        .map(|p| Ok(tape.constant(p.tensor().reshape(&[1, p.tokens(), p.d_tok()])?)))
        .collect::<Result<Vec<_>>>()?;
    let features = baseline_features(&mut tape, &phis, mode)?;
    let logits = head.forward(&mut tape, &bound, features)?;
    Ok(tape.value(logits).data().to_vec())
}
