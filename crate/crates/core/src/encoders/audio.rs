use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

use super::attention::SelfAttention;
use super::mfcc::{pooled_mfcc, MfccConfig};
use super::TokenDims;

/// Frame-pooled MFCCs, standardized with stored feature statistics, mapped
/// linearly to `d_lat` and self-attended as tokens.
///
/// The statistics are parameters so they travel with checkpoints, but they
/// are never trained; see [`AudioEncoder::fixed_params`].
#[derive(Debug, Clone)]
pub struct AudioEncoder {
    pub dims: TokenDims,
    pub mfcc: MfccConfig,
    pub feature_mean: ParamId,
    pub feature_std: ParamId,
    pub proj: (ParamId, ParamId),
    pub attention: SelfAttention,
}

impl AudioEncoder {
    pub fn new(
        store: &mut ParamStore,
        mfcc: MfccConfig,
        dims: TokenDims,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        mfcc.validate()?;
        let n = mfcc.n_coefficients;
        let feature_mean = store.add("audio.feature_mean", Tensor::zeros(&[n]));
        let feature_std = store.add("audio.feature_std", Tensor::ones(&[n]));
        let proj = (
            store.add(
                "audio.proj.w",
                init::glorot(rng, &[n, dims.d_lat], n, dims.d_lat),
            ),
            store.add("audio.proj.b", Tensor::zeros(&[dims.d_lat])),
        );
        let attention = SelfAttention::new(store, "audio.attn", dims.d_tok, rng);
        Ok(Self {
            dims,
            mfcc,
            feature_mean,
            feature_std,
            proj,
            attention,
        })
    }

    pub fn fixed_params(&self) -> [ParamId; 2] {
        [self.feature_mean, self.feature_std]
    }

    /// Pooled MFCC vector of one waveform.
    pub fn features(&self, waveform: &[f64]) -> Result<Vec<f64>> {
        pooled_mfcc(waveform, &self.mfcc)
    }

    /// Sets the standardization statistics from training features `[B, n]`.
    pub fn fit_statistics(&self, store: &mut ParamStore, features: &Tensor) -> Result<()> {
        let n = self.mfcc.n_coefficients;
        if features.rank() != 2 || features.shape()[1] != n || features.shape()[0] == 0 {
            return Err(Error::shape("fit_statistics", features.shape(), &[0, n]));
        }
        let rows = features.shape()[0] as f64;
        let mut mean = vec![0.0; n];
        for r in 0..features.shape()[0] {
            mean.iter_mut()
                .zip(features.row(r))
                .for_each(|(m, v)| *m += v / rows);
        }
        let mut var = vec![0.0; n];
        for r in 0..features.shape()[0] {
            for ((s, v), m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                *s += (v - m) * (v - m) / rows;
            }
        }
        let std = var.iter().map(|v| v.sqrt().max(1e-6)).collect();
        *store.get_mut(self.feature_mean) = Tensor::new(vec![n], mean)?;
        *store.get_mut(self.feature_std) = Tensor::new(vec![n], std)?;
        Ok(())
    }

    /// Latent features `[B, d_lat]` of pooled MFCC vectors `features[B, n]`.
    pub fn latent(&self, tape: &mut Tape, bound: &Bound, features: &Tensor) -> Result<Var> {
        let n = self.mfcc.n_coefficients;
        if features.rank() != 2 || features.shape()[1] != n {
            return Err(Error::shape("audio features", features.shape(), &[0, n]));
        }
        let mean = tape.value(bound.var(self.feature_mean)).data().to_vec();
        let std = tape.value(bound.var(self.feature_std)).data().to_vec();
        let mut standardized = features.clone();
        for row in standardized.data_mut().chunks_mut(n) {
            for ((v, m), s) in row.iter_mut().zip(&mean).zip(&std) {
                *v = (*v - m) / s;
            }
        }
        let x = tape.constant(standardized);
        tape.linear(x, bound.var(self.proj.0), Some(bound.var(self.proj.1)))
    }
}
