//! Run directories under the output root.
//!
//! ```text
//! <root>/unimodal/<modality>-seed<s>/
//! <root>/fusion/<fusion>-eta<e>-noise<n>-seed<s>/
//! ```
//!
//! Each holds `params.bin` (flat parameter file), `config.txt` (the run's
//! configuration with absolute data paths), `checkpoint.txt` (key=value
//! metadata) and `metrics.csv`.

use std::collections::BTreeMap;
use std::fmt::{Display, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mda_core::data::ModalityKind;
use mda_core::ParamStore;

use crate::config::{ExperimentConfig, FusionKind};
use crate::error::{HarnessError, Result};
use crate::evaluate::{metrics_csv, MetricsRecord};
use crate::model::{build_fusion, build_unimodal, FusionModel, UniModel};
use crate::prepare::{prepare, Prepared};
use crate::train::{encoder_hashes, FusionTraining, UniTraining};

pub const PARAMS_FILE: &str = "params.bin";
pub const CONFIG_FILE: &str = "config.txt";
pub const META_FILE: &str = "checkpoint.txt";
pub const METRICS_FILE: &str = "metrics.csv";

pub fn unimodal_dir(root: &Path, kind: ModalityKind, seed: u64) -> PathBuf {
    root.join("unimodal").join(format!("{kind}-seed{seed}"))
}

pub fn fusion_dir(root: &Path, kind: FusionKind, eta: f64, noise: f64, seed: u64) -> PathBuf {
    root.join("fusion")
        .join(format!("{kind}-eta{eta}-noise{noise}-seed{seed}"))
}

/// Ordered key=value metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Meta(BTreeMap<String, String>);

impl Meta {
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| HarnessError::Config(format!("checkpoint metadata lacks `{key}`")))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| {
            HarnessError::Config(format!("checkpoint metadata `{key}` has bad value `{v}`"))
        })
    }

    pub fn to_text(&self) -> String {
        self.0.iter().fold(String::new(), |mut out, (k, v)| {
            let _ = writeln!(out, "{k}={v}");
            out
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut meta = Meta::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("{}: malformed line `{line}`", path.display()))
            })?;
            meta.set(k, v);
        }
        Ok(meta)
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn absolute_paths(cfg: &ExperimentConfig) -> Result<ExperimentConfig> {
    let mut cfg = cfg.clone();
    for p in [
        &mut cfg.mnist_images,
        &mut cfg.mnist_labels,
        &mut cfg.audio_dir,
    ]
    .into_iter()
    .flatten()
    {
        *p = std::path::absolute(&*p).map_err(|e| HarnessError::io(&*p, e))?;
    }
    Ok(cfg)
}

fn join<T: Display>(values: &[T]) -> String {
    values
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Writes a trained uni-modal encoder and head; returns the run directory.
pub fn save_unimodal(root: &Path, prep: &Prepared, seed: u64, t: &UniTraining) -> Result<PathBuf> {
    let dir = unimodal_dir(root, t.model.kind, seed);
    create_dir(&dir)?;
    t.model.store.save(dir.join(PARAMS_FILE))?;
    write_file(
        &dir.join(CONFIG_FILE),
        absolute_paths(&prep.config)?.to_text(),
    )?;
    let mut meta = Meta::default();
    meta.set("stage", "unimodal");
    meta.set("modality", t.model.kind);
    meta.set("seed", seed);
    meta.set("dataset_hash", prep.dataset.content_hash());
    meta.set("params_sha256", t.model.store.content_hash());
    write_file(&dir.join(META_FILE), meta.to_text())?;
    let mut csv = String::from("metric,epoch,value\n");
    let _ = writeln!(csv, "accuracy,,{}", t.test_accuracy);
    for (e, l) in t.loss_curve.iter().enumerate() {
        let _ = writeln!(csv, "loss,{e},{l}");
    }
    write_file(&dir.join(METRICS_FILE), csv)?;
    Ok(dir)
}

fn load_store(dir: &Path, store: &mut ParamStore, meta: &Meta) -> Result<()> {
    store.replace_values(ParamStore::load(dir.join(PARAMS_FILE))?)?;
    let want = meta.get("params_sha256")?;
    if store.content_hash() != want {
        return Err(mda_core::Error::Format {
            kind: "checkpoint",
            message: format!(
                "{}: parameters do not match the recorded hash",
                dir.display()
            ),
        }
        .into());
    }
    Ok(())
}

/// Uni-modal model of modality `m` saved for this dataset and seed.
pub fn load_unimodal(root: &Path, prep: &Prepared, m: usize, seed: u64) -> Result<UniModel> {
    let dir = unimodal_dir(root, prep.dataset.modalities[m], seed);
    if !dir.join(PARAMS_FILE).is_file() || !dir.join(META_FILE).is_file() {
        return Err(HarnessError::MissingCheckpoint(dir.display().to_string()));
    }
    let meta = Meta::read(&dir.join(META_FILE))?;
    let hash = prep.dataset.content_hash();
    if meta.get("dataset_hash")? != hash {
        return Err(HarnessError::MissingCheckpoint(format!(
            "{} was trained on a different dataset (expected content hash {hash})",
            dir.display()
        )));
    }
    let mut model = build_unimodal(prep, m, seed)?;
    load_store(&dir, &mut model.store, &meta)?;
    Ok(model)
}

pub fn load_unimodals(root: &Path, prep: &Prepared, seed: u64) -> Result<Vec<UniModel>> {
    (0..prep.n_modalities())
        .map(|m| load_unimodal(root, prep, m, seed))
        .collect()
}

/// Rates and seed of a fusion run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionRun {
    pub kind: FusionKind,
    pub eta: f64,
    pub noise: f64,
    pub seed: u64,
}

pub fn save_fusion(
    root: &Path,
    prep: &Prepared,
    run: FusionRun,
    unis: &[UniModel],
    t: &FusionTraining,
    metrics: &MetricsRecord,
) -> Result<PathBuf> {
    let dir = fusion_dir(root, run.kind, run.eta, run.noise, run.seed);
    create_dir(&dir)?;
    t.model.store.save(dir.join(PARAMS_FILE))?;
    let mut cfg = absolute_paths(&prep.config)?;
    cfg.fusion = run.kind;
    cfg.eta = run.eta;
    cfg.noise = run.noise;
    cfg.seeds = vec![run.seed];
    write_file(&dir.join(CONFIG_FILE), cfg.to_text())?;
    let mut meta = Meta::default();
    meta.set("stage", "fusion");
    meta.set("fusion", run.kind);
    meta.set("eta", run.eta);
    meta.set("noise", run.noise);
    meta.set("seed", run.seed);
    meta.set("dataset_hash", prep.dataset.content_hash());
    meta.set("encoders", join(&encoder_hashes(unis)));
    meta.set("params_sha256", t.model.store.content_hash());
    meta.set("loss_curve", join(&t.loss_curve));
    write_file(&dir.join(META_FILE), meta.to_text())?;
    let names: Vec<String> = prep
        .dataset
        .modalities
        .iter()
        .map(|m| m.to_string())
        .collect();
    write_file(&dir.join(METRICS_FILE), metrics_csv(metrics, &names))?;
    Ok(dir)
}

/// Everything needed to evaluate a saved fusion model.
#[derive(Debug, Clone)]
pub struct FusionCheckpoint {
    pub dir: PathBuf,
    pub run: FusionRun,
    pub prep: Prepared,
    pub unis: Vec<UniModel>,
    pub model: FusionModel,
    pub loss_curve: Vec<f64>,
}

pub fn read_fusion_meta(dir: &Path) -> Result<(Meta, FusionRun)> {
    let path = dir.join(META_FILE);
    if !path.is_file() {
        return Err(HarnessError::MissingCheckpoint(dir.display().to_string()));
    }
    let meta = Meta::read(&path)?;
    if meta.get("stage")? != "fusion" {
        return Err(HarnessError::Config(format!(
            "{} is not a fusion checkpoint",
            dir.display()
        )));
    }
    let run = FusionRun {
        kind: meta.get("fusion")?.parse()?,
        eta: meta.parse("eta")?,
        noise: meta.parse("noise")?,
        seed: meta.parse("seed")?,
    };
    Ok((meta, run))
}

/// Loads a fusion run directory together with the uni-modal encoders it was
/// trained on, which must be unchanged.
pub fn load_fusion(dir: &Path) -> Result<FusionCheckpoint> {
    let (meta, run) = read_fusion_meta(dir)?;
    let cfg = ExperimentConfig::load(dir.join(CONFIG_FILE))?;
    let prep = prepare(&cfg)?;
    let root = dir.parent().and_then(Path::parent).ok_or_else(|| {
        HarnessError::Config(format!("{} is not inside a run root", dir.display()))
    })?;
    let unis = load_unimodals(root, &prep, run.seed)?;
    let recorded = meta.get("encoders")?;
    let current = join(&encoder_hashes(&unis));
    if recorded != current {
        return Err(HarnessError::FrozenDrift(format!(
            "encoders now hash to {current}, the fusion model was trained on {recorded}"
        )));
    }
    let mut model = build_fusion(&prep, run.kind, run.seed)?;
    load_store(dir, &mut model.store, &meta)?;
    let loss_curve = meta
        .get("loss_curve")?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| HarnessError::Config(format!("bad loss value `{s}`")))
        })
        .collect::<Result<_>>()?;
    Ok(FusionCheckpoint {
        dir: dir.to_path_buf(),
        run,
        prep,
        unis,
        model,
        loss_curve,
    })
}
