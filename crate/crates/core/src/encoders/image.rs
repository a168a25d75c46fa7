use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

use super::attention::SelfAttention;
use super::TokenDims;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageEncoderConfig {
    pub height: usize,
    pub width: usize,
    pub channels: [usize; 2],
    pub kernel: usize,
}

impl ImageEncoderConfig {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            channels: [8, 16],
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height % 4 != 0 || self.width % 4 != 0 {
            return Err(Error::Config(format!(
                "image size {}x{} must be a positive multiple of 4",
                self.height, self.width
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size {} must be odd",
                self.kernel
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::Config("conv channel counts must be positive".into()));
        }
        Ok(())
    }

    /// Flattened width after both conv+pool stages.
    pub fn flat_width(&self) -> usize {
        self.channels[1] * (self.height / 4) * (self.width / 4)
    }
}

/// Two conv3×3+ReLU+maxpool2 stages, a linear map to `d_lat`, then
/// self-attention over the reshaped tokens.
#[derive(Debug, Clone)]
pub struct ImageEncoder {
    pub config: ImageEncoderConfig,
    pub dims: TokenDims,
    pub conv1: (ParamId, ParamId),
    pub conv2: (ParamId, ParamId),
    pub proj: (ParamId, ParamId),
    pub attention: SelfAttention,
}

impl ImageEncoder {
    pub fn new(
        store: &mut ParamStore,
        config: ImageEncoderConfig,
        dims: TokenDims,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let k = config.kernel;
        let [c1, c2] = config.channels;
        let conv1 = (
            store.add("image.conv1.w", init::he(rng, &[c1, 1, k, k], k * k)),
            store.add("image.conv1.b", Tensor::zeros(&[c1])),
        );
        let conv2 = (
            store.add("image.conv2.w", init::he(rng, &[c2, c1, k, k], c1 * k * k)),
            store.add("image.conv2.b", Tensor::zeros(&[c2])),
        );
        let flat = config.flat_width();
        let proj = (
            store.add(
                "image.proj.w",
                init::glorot(rng, &[flat, dims.d_lat], flat, dims.d_lat),
            ),
            store.add("image.proj.b", Tensor::zeros(&[dims.d_lat])),
        );
        let attention = SelfAttention::new(store, "image.attn", dims.d_tok, rng);
        Ok(Self {
            config,
            dims,
            conv1,
            conv2,
            proj,
            attention,
        })
    }

    /// Latent features `[B, d_lat]` of `pixels[B, 1, H, W]`.
    pub fn latent(&self, tape: &mut Tape, bound: &Bound, pixels: &Tensor) -> Result<Var> {
        let s = pixels.shape();
        let c = &self.config;
        if s.len() != 4 || s[1] != 1 || s[2] != c.height || s[3] != c.width {
            return Err(Error::Validation(format!(
                "expected images of shape [B, 1, {}, {}], got {:?}",
                c.height, c.width, s
            )));
        }
        let batch = s[0];
        let x = tape.constant(pixels.clone());
        let mut h = x;
        for (w, b) in [self.conv1, self.conv2] {
            h = tape.conv2d(h, bound.var(w), bound.var(b))?;
            h = tape.relu(h);
            h = tape.max_pool2(h)?;
        }
        let flat = tape.reshape(h, &[batch, c.flat_width()])?;
        tape.linear(flat, bound.var(self.proj.0), Some(bound.var(self.proj.1)))
    }
}
