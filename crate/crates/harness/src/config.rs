//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated; chain orders are `;`-separated lists of modality indices,
//! one per target modality (`1,2;0,2;0,1`). Unknown keys are errors.
//!
//! A relative `output_dir` is resolved against `$MDA_OUTPUT_ROOT` when that
//! variable is set.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mda_core::fusion::{BaselineMode, FusionInput, WeightMode, DEFAULT_HIDDEN};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const OUTPUT_ROOT_ENV: &str = "MDA_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic,
    Avmnist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticProfile {
    Standard,
    Noiseless,
}

/// Fusion strategy of a fusion-stage model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionKind {
    Mda,
    Baseline(BaselineMode),
}

macro_rules! named {
    ($ty:ty, $what:literal, $($variant:expr => $name:literal),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }

        impl FromStr for $ty {
            type Err = HarnessError;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(HarnessError::Config(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
    };
}

named!(DatasetKind, "dataset", DatasetKind::Synthetic => "synthetic", DatasetKind::Avmnist => "avmnist");
named!(SyntheticProfile, "synthetic profile", SyntheticProfile::Standard => "standard", SyntheticProfile::Noiseless => "noiseless");
named!(
    FusionKind, "fusion",
    FusionKind::Mda => "mda",
    FusionKind::Baseline(BaselineMode::Addition) => "addition",
    FusionKind::Baseline(BaselineMode::Maximum) => "maximum",
    FusionKind::Baseline(BaselineMode::Concatenate) => "concatenate",
);

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub synthetic_profile: SyntheticProfile,
    pub synthetic_samples: usize,
    pub synthetic_seed: u64,
    pub prototype_seed: u64,
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
    pub audio_dir: Option<PathBuf>,
    pub pairing_seed: u64,
    pub train_ratio: f64,
    pub split_seed: u64,
    pub d_lat: usize,
    pub tokens: usize,
    pub d_tok: usize,
    pub image_channels: [usize; 2],
    pub hidden: usize,
    pub chain_order: Option<Vec<Vec<usize>>>,
    pub fusion: FusionKind,
    pub fusion_input: FusionInput,
    pub weight_mode: WeightMode,
    pub eta: f64,
    pub noise: f64,
    pub fusion_grid: Vec<FusionKind>,
    pub eta_grid: Vec<f64>,
    pub noise_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub fusion_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Synthetic,
            synthetic_profile: SyntheticProfile::Standard,
            synthetic_samples: 1500,
            synthetic_seed: 1,
            prototype_seed: 0,
            mnist_images: None,
            mnist_labels: None,
            audio_dir: None,
            pairing_seed: 0,
            train_ratio: 0.7,
            split_seed: 0,
            d_lat: 128,
            tokens: 8,
            d_tok: 16,
            image_channels: [8, 16],
            hidden: DEFAULT_HIDDEN,
            chain_order: None,
            fusion: FusionKind::Mda,
            fusion_input: FusionInput::default(),
            weight_mode: WeightMode::default(),
            eta: 1.0,
            noise: 0.0,
            fusion_grid: vec![
                FusionKind::Mda,
                FusionKind::Baseline(BaselineMode::Addition),
                FusionKind::Baseline(BaselineMode::Maximum),
                FusionKind::Baseline(BaselineMode::Concatenate),
            ],
            eta_grid: vec![1.0, 0.5, 0.2],
            noise_grid: vec![0.0],
            seeds: vec![0],
            epochs: 50,
            fusion_epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            output_dir: PathBuf::from("runs"),
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| HarnessError::Config(format!("{key}: cannot parse `{s}`")))
        })
        .collect()
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("{key}: cannot parse `{value}`")))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected `key = value`", n + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.mnist_images,
            &mut cfg.mnist_labels,
            &mut cfg.audio_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || (!value.is_empty()).then(|| PathBuf::from(value));
        match key {
            "dataset" => self.dataset = value.parse()?,
            "synthetic_profile" => self.synthetic_profile = value.parse()?,
            "synthetic_samples" => self.synthetic_samples = parse_one(key, value)?,
            "synthetic_seed" => self.synthetic_seed = parse_one(key, value)?,
            "prototype_seed" => self.prototype_seed = parse_one(key, value)?,
            "mnist_images" => self.mnist_images = path(),
            "mnist_labels" => self.mnist_labels = path(),
            "audio_dir" => self.audio_dir = path(),
            "pairing_seed" => self.pairing_seed = parse_one(key, value)?,
            "train_ratio" => self.train_ratio = parse_one(key, value)?,
            "split_seed" => self.split_seed = parse_one(key, value)?,
            "d_lat" => self.d_lat = parse_one(key, value)?,
            "tokens" => self.tokens = parse_one(key, value)?,
            "d_tok" => self.d_tok = parse_one(key, value)?,
            "image_channels" => {
                let c: Vec<usize> = parse_list(key, value)?;
                self.image_channels = c
                    .try_into()
                    .map_err(|_| HarnessError::Config("image_channels takes two values".into()))?;
            }
            "hidden" => self.hidden = parse_one(key, value)?,
            "chain_order" => {
                self.chain_order = if value.is_empty() || value == "default" {
                    None
                } else {
                    Some(
                        value
                            .split(';')
                            .map(|o| parse_list(key, o))
                            .collect::<Result<_>>()?,
                    )
                }
            }
            "fusion" => self.fusion = value.parse()?,
            "fusion_input" => self.fusion_input = value.parse()?,
            "weight_mode" => self.weight_mode = value.parse()?,
            "eta" => self.eta = parse_one(key, value)?,
            "noise" => self.noise = parse_one(key, value)?,
            "fusion_grid" => {
                self.fusion_grid = value
                    .split(',')
                    .map(|s| s.trim().parse())
                    .collect::<Result<_>>()?
            }
            "eta_grid" => self.eta_grid = parse_list(key, value)?,
            "noise_grid" => self.noise_grid = parse_list(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "epochs" => self.epochs = parse_one(key, value)?,
            "fusion_epochs" => self.fusion_epochs = parse_one(key, value)?,
            "batch_size" => self.batch_size = parse_one(key, value)?,
            "learning_rate" => self.learning_rate = parse_one(key, value)?,
            "weight_decay" => self.weight_decay = parse_one(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            other => return Err(HarnessError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Every setting in canonical order; parses back to an equal config.
    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let order = match &self.chain_order {
            None => "default".to_string(),
            Some(o) => o.iter().map(|x| join(x)).collect::<Vec<_>>().join(";"),
        };
        BTreeMap::from([
            ("dataset", self.dataset.to_string()),
            ("synthetic_profile", self.synthetic_profile.to_string()),
            ("synthetic_samples", self.synthetic_samples.to_string()),
            ("synthetic_seed", self.synthetic_seed.to_string()),
            ("prototype_seed", self.prototype_seed.to_string()),
            ("mnist_images", path(&self.mnist_images)),
            ("mnist_labels", path(&self.mnist_labels)),
            ("audio_dir", path(&self.audio_dir)),
            ("pairing_seed", self.pairing_seed.to_string()),
            ("train_ratio", self.train_ratio.to_string()),
            ("split_seed", self.split_seed.to_string()),
            ("d_lat", self.d_lat.to_string()),
            ("tokens", self.tokens.to_string()),
            ("d_tok", self.d_tok.to_string()),
            ("image_channels", join(&self.image_channels)),
            ("hidden", self.hidden.to_string()),
            ("chain_order", order),
            ("fusion", self.fusion.to_string()),
            ("fusion_input", self.fusion_input.to_string()),
            ("weight_mode", self.weight_mode.to_string()),
            ("eta", self.eta.to_string()),
            ("noise", self.noise.to_string()),
            ("fusion_grid", join(&self.fusion_grid)),
            ("eta_grid", join(&self.eta_grid)),
            ("noise_grid", join(&self.noise_grid)),
            ("seeds", join(&self.seeds)),
            ("epochs", self.epochs.to_string()),
            ("fusion_epochs", self.fusion_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
        ])
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of the canonical text minus `output_dir`, so moving a run
    /// does not change its identity.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "output_dir" {
                h.update(format!("{k}={v}\n"));
            }
        }
        hex::encode(h.finalize())
    }

    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => {
                PathBuf::from(root).join(&self.output_dir)
            }
            _ => self.output_dir.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.tokens == 0 || self.d_lat != self.tokens * self.d_tok {
            return bad(format!(
                "d_lat ({}) must equal tokens ({}) x d_tok ({})",
                self.d_lat, self.tokens, self.d_tok
            ));
        }
        if self.fusion_grid.is_empty()
            || self.eta_grid.is_empty()
            || self.noise_grid.is_empty()
            || self.seeds.is_empty()
        {
            return bad("fusion, eta and noise grids and the seed list must be non-empty".into());
        }
        for r in self
            .eta_grid
            .iter()
            .chain(&self.noise_grid)
            .chain([&self.eta, &self.noise])
        {
            if !(0.0..=1.0).contains(r) {
                return bad(format!("rate {r} outside [0, 1]"));
            }
        }
        if self.epochs == 0 || self.fusion_epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return bad("epochs, fusion_epochs, batch_size and hidden must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning_rate must be positive and weight_decay nonnegative".into());
        }
        if self.dataset == DatasetKind::Avmnist {
            for (key, p) in [
                ("mnist_images", &self.mnist_images),
                ("mnist_labels", &self.mnist_labels),
                ("audio_dir", &self.audio_dir),
            ] {
                match p {
                    None => return bad(format!("{key} is required for avmnist")),
                    Some(p) if !p.exists() => {
                        return bad(format!("{key} {} does not exist", p.display()))
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }
}
