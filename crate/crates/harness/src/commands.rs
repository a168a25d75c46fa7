//! The operations behind each CLI subcommand.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mda_core::data::ModalityKind;

use crate::checkpoint::{
    load_fusion, load_unimodals, read_fusion_meta, save_fusion, save_unimodal, FusionRun,
};
use crate::config::{ExperimentConfig, FusionKind};
use crate::error::{HarnessError, Result};
use crate::evaluate::{
    check_rates, evaluate, metrics_csv, weight_csv, weight_report, weight_table, MetricsRecord,
    Scenario, WeightRow,
};
use crate::model::UniModel;
use crate::prepare::{prepare, Prepared};
use crate::train::{phi_cache, train_fusion, train_unimodal, PhiCache, UniTraining};

pub const ABLATION_FILE: &str = "ablation.csv";

fn first_seed(cfg: &ExperimentConfig) -> Result<u64> {
    cfg.seeds
        .first()
        .copied()
        .ok_or_else(|| HarnessError::Config("seeds is empty".into()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

/// Trains one modality with the first configured seed and saves it.
pub fn run_train_unimodal(
    cfg: &ExperimentConfig,
    modality: &str,
) -> Result<(PathBuf, UniTraining)> {
    let kind: ModalityKind = modality.parse()?;
    let prep = prepare(cfg)?;
    let m = prep.dataset.modality_index(kind).ok_or_else(|| {
        HarnessError::Config(format!("dataset {} has no {kind} modality", cfg.dataset))
    })?;
    let seed = first_seed(cfg)?;
    let t = train_unimodal(&prep, m, seed)?;
    let dir = save_unimodal(&cfg.output_root(), &prep, seed, &t)?;
    Ok((dir, t))
}

/// Trains `cfg.fusion` at `cfg.eta`/`cfg.noise` over saved encoders and
/// evaluates it under the matched-rate test plan.
pub fn run_train_fusion(cfg: &ExperimentConfig) -> Result<(PathBuf, MetricsRecord)> {
    let prep = prepare(cfg)?;
    let seed = first_seed(cfg)?;
    let root = cfg.output_root();
    let unis = load_unimodals(&root, &prep, seed)?;
    let cache = phi_cache(&prep, &unis)?;
    let t = train_fusion(&prep, &unis, &cache, cfg.fusion, cfg.eta, cfg.noise, seed)?;
    let metrics = evaluate(
        &prep,
        &unis,
        &cache,
        &t.model,
        cfg.eta,
        cfg.noise,
        seed,
        &t.loss_curve,
    )?;
    let run = FusionRun {
        kind: cfg.fusion,
        eta: cfg.eta,
        noise: cfg.noise,
        seed,
    };
    let dir = save_fusion(&root, &prep, run, &unis, &t, &metrics)?;
    Ok((dir, metrics))
}

fn modality_names(prep: &Prepared) -> Vec<String> {
    prep.dataset
        .modalities
        .iter()
        .map(|m| m.to_string())
        .collect()
}

/// Evaluates a saved fusion model; writes `eval-eta<e>-noise<n>.csv` into
/// the checkpoint directory.
pub fn run_evaluate(
    checkpoint: &Path,
    eta: f64,
    noise: f64,
    mismatch_ok: bool,
) -> Result<(PathBuf, MetricsRecord)> {
    let (_, run) = read_fusion_meta(checkpoint)?;
    check_rates((run.eta, run.noise), (eta, noise), mismatch_ok)?;
    let ck = load_fusion(checkpoint)?;
    let cache = phi_cache(&ck.prep, &ck.unis)?;
    let metrics = evaluate(
        &ck.prep,
        &ck.unis,
        &cache,
        &ck.model,
        eta,
        noise,
        run.seed,
        &ck.loss_curve,
    )?;
    let path = checkpoint.join(format!("eval-eta{eta}-noise{noise}.csv"));
    write_file(&path, &metrics_csv(&metrics, &modality_names(&ck.prep)))?;
    Ok((path, metrics))
}

/// Weight table of a saved MDA model; writes `weights-<scenario>.csv` and
/// `weights-<scenario>.txt` into the checkpoint directory.
pub fn run_weight_report(checkpoint: &Path, scenario: &str) -> Result<(PathBuf, Vec<WeightRow>)> {
    let ck = load_fusion(checkpoint)?;
    let names = modality_names(&ck.prep);
    let scenarios = Scenario::parse(scenario, &names, ck.prep.text_index().is_some())?;
    let cache = phi_cache(&ck.prep, &ck.unis)?;
    let rows = weight_report(
        &ck.prep,
        &ck.unis,
        &cache,
        &ck.model,
        &scenarios,
        ck.run.seed,
    )?;
    let path = checkpoint.join(format!("weights-{scenario}.csv"));
    write_file(&path, &weight_csv(&rows))?;
    write_file(
        &checkpoint.join(format!("weights-{scenario}.txt")),
        &weight_table(&rows),
    )?;
    Ok((path, rows))
}

/// One grid cell of an ablation run.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub fusion: FusionKind,
    pub eta: f64,
    pub noise: f64,
    pub seed: u64,
    pub config_hash: String,
    /// Accuracy and macro-F1, or the failure.
    pub outcome: std::result::Result<(f64, f64), String>,
}

fn cell_config(
    cfg: &ExperimentConfig,
    fusion: FusionKind,
    eta: f64,
    noise: f64,
    seed: u64,
) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.fusion = fusion;
    c.eta = eta;
    c.noise = noise;
    c.seeds = vec![seed];
    c
}

fn ablation_cell(
    prep: &Prepared,
    stage: &std::result::Result<(Vec<UniModel>, PhiCache), String>,
    fusion: FusionKind,
    eta: f64,
    noise: f64,
    seed: u64,
) -> std::result::Result<(f64, f64), String> {
    let (unis, cache) = stage.as_ref().map_err(Clone::clone)?;
    let run = || -> Result<(f64, f64)> {
        let t = train_fusion(prep, unis, cache, fusion, eta, noise, seed)?;
        let m = evaluate(prep, unis, cache, &t.model, eta, noise, seed, &t.loss_curve)?;
        Ok((m.accuracy, m.macro_f1))
    };
    run().map_err(|e| format!("{}: {e}", e.kind()))
}

/// Full train and evaluate cycle for every seed x fusion x eta x noise
/// cell. Encoders are trained once per seed and shared by that seed's
/// cells. Failed cells are recorded and the grid continues.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<(PathBuf, Vec<AblationRow>)> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let encoders = || -> Result<(Vec<UniModel>, PhiCache)> {
            let unis = (0..prep.n_modalities())
                .map(|m| train_unimodal(&prep, m, seed).map(|t| t.model))
                .collect::<Result<Vec<_>>>()?;
            let cache = phi_cache(&prep, &unis)?;
            Ok((unis, cache))
        };
        let stage = encoders().map_err(|e| format!("{}: {e}", e.kind()));
        for &fusion in &cfg.fusion_grid {
            for &eta in &cfg.eta_grid {
                for &noise in &cfg.noise_grid {
                    rows.push(AblationRow {
                        fusion,
                        eta,
                        noise,
                        seed,
                        config_hash: cell_config(cfg, fusion, eta, noise, seed).hash(),
                        outcome: ablation_cell(&prep, &stage, fusion, eta, noise, seed),
                    });
                }
            }
        }
    }
    let root = cfg.output_root();
    std::fs::create_dir_all(&root).map_err(|e| HarnessError::io(&root, e))?;
    let path = root.join(ABLATION_FILE);
    write_file(&path, &ablation_csv(&rows))?;
    Ok((path, rows))
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out =
        String::from("fusion,eta,noise,seed,status,accuracy,macro_f1,config_hash,error\n");
    for r in rows {
        let _ = match &r.outcome {
            Ok((acc, f1)) => writeln!(
                out,
                "{},{},{},{},ok,{acc},{f1},{},",
                r.fusion, r.eta, r.noise, r.seed, r.config_hash
            ),
            Err(e) => writeln!(
                out,
                "{},{},{},{},failed,,,{},\"{}\"",
                r.fusion,
                r.eta,
                r.noise,
                r.seed,
                r.config_hash,
                e.replace('"', "'")
            ),
        };
    }
    out
}
