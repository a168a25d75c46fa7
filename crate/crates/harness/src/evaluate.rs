//! Test-set evaluation, metrics and modality weight reports.

use std::fmt::Write as _;

use mda_core::corruption::{CorruptionPlan, PlanEntry};
use mda_core::Tape;

use crate::error::{HarnessError, Result};
use crate::model::{argmax_rows, derive_seed, FusionModel, UniModel, EVAL_BATCH};
use crate::prepare::{gather_rows, Prepared};
use crate::train::{corrupted_phis, plan_for, PhiCache};

/// Tolerance on the sum of every emitted weight row.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub macro_f1: f64,
    /// Reserved for multi-label tasks.
    pub sample_f1: Option<f64>,
    pub loss_curve: Vec<f64>,
    /// `[class][modality] = (mean, std)` of the MDA weights.
    pub class_weights: Option<Vec<Vec<(f64, f64)>>>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub predicted: Vec<usize>,
    pub labels: Vec<usize>,
    /// Per sample, one weight per modality (MDA only).
    pub weights: Option<Vec<Vec<f64>>>,
}

pub fn predict_fusion(
    prep: &Prepared,
    unis: &[UniModel],
    cache: &PhiCache,
    model: &FusionModel,
    idx: &[usize],
    plan: &CorruptionPlan,
) -> Result<Predictions> {
    let phis = corrupted_phis(prep, unis, cache, idx, plan)?;
    let positions: Vec<usize> = (0..idx.len()).collect();
    let mut predicted = Vec::with_capacity(idx.len());
    let mut weights: Option<Vec<Vec<f64>>> = None;
    for chunk in positions.chunks(EVAL_BATCH) {
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape, false);
        let phi_vars = phis
            .iter()
            .map(|p| Ok(tape.constant(gather_rows(p, chunk)?)))
            .collect::<Result<Vec<_>>>()?;
        let q_vars: Vec<_> = unis
            .iter()
            .map(|u| tape.constant(u.query().clone()))
            .collect();
        let (logits, w) = model.forward(&mut tape, &bound, &phi_vars, &q_vars)?;
        predicted.extend(argmax_rows(tape.value(logits)));
        if let Some(w) = w {
            let w = tape.value(w);
            let n = w.shape()[1];
            for row in w.data().chunks(n) {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                    return Err(mda_core::Error::Contract(format!(
                        "weight row {row:?} sums to {sum}"
                    ))
                    .into());
                }
                weights.get_or_insert_with(Vec::new).push(row.to_vec());
            }
        }
    }
    Ok(Predictions {
        predicted,
        labels: prep.labels(idx),
        weights,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn metrics(pred: &Predictions, classes: usize, loss_curve: &[f64]) -> MetricsRecord {
    let mut tp = vec![0usize; classes];
    let mut support = vec![0usize; classes];
    let mut predicted = vec![0usize; classes];
    for (&p, &l) in pred.predicted.iter().zip(&pred.labels) {
        support[l] += 1;
        predicted[p] += 1;
        if p == l {
            tp[l] += 1;
        }
    }
    let n = pred.labels.len();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let per_class_accuracy: Vec<f64> = (0..classes).map(|c| ratio(tp[c], support[c])).collect();
    let f1: Vec<f64> = (0..classes)
        .map(|c| {
            let (p, r) = (ratio(tp[c], predicted[c]), ratio(tp[c], support[c]));
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        })
        .collect();
    let class_weights = pred.weights.as_ref().map(|w| {
        let n_mod = w.first().map_or(0, Vec::len);
        (0..classes)
            .map(|c| {
                (0..n_mod)
                    .map(|m| {
                        let vals: Vec<f64> = w
                            .iter()
                            .zip(&pred.labels)
                            .filter(|(_, &l)| l == c)
                            .map(|(row, _)| row[m])
                            .collect();
                        mean_std(&vals)
                    })
                    .collect()
            })
            .collect()
    });
    MetricsRecord {
        accuracy: ratio(tp.iter().sum(), n),
        per_class_accuracy,
        macro_f1: f1.iter().sum::<f64>() / classes as f64,
        sample_f1: None,
        loss_curve: loss_curve.to_vec(),
        class_weights,
        samples: n,
    }
}

/// Fixed test plan at the given rates.
pub fn test_plan(prep: &Prepared, eta: f64, noise: f64, seed: u64) -> Result<CorruptionPlan> {
    plan_for(prep, &prep.test, eta, noise, derive_seed(seed, "test-plan"))
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    prep: &Prepared,
    unis: &[UniModel],
    cache: &PhiCache,
    model: &FusionModel,
    eta: f64,
    noise: f64,
    seed: u64,
    loss_curve: &[f64],
) -> Result<MetricsRecord> {
    let plan = test_plan(prep, eta, noise, seed)?;
    let pred = predict_fusion(prep, unis, cache, model, &prep.test, &plan)?;
    Ok(metrics(&pred, prep.classes(), loss_curve))
}

/// Fails unless the evaluation rates equal the training rates.
pub fn check_rates(trained: (f64, f64), requested: (f64, f64), mismatch_ok: bool) -> Result<()> {
    if trained != requested && !mismatch_ok {
        return Err(HarnessError::RateMismatch(format!(
            "trained at eta={} noise={}, asked for eta={} noise={}",
            trained.0, trained.1, requested.0, requested.1
        )));
    }
    Ok(())
}

pub fn metrics_csv(m: &MetricsRecord, modality_names: &[String]) -> String {
    let mut out = String::from("metric,class,modality,value,std\n");
    let _ = writeln!(out, "accuracy,,,{},", m.accuracy);
    let _ = writeln!(out, "macro_f1,,,{},", m.macro_f1);
    let _ = writeln!(out, "samples,,,{},", m.samples);
    for (c, a) in m.per_class_accuracy.iter().enumerate() {
        let _ = writeln!(out, "class_accuracy,{c},,{a},");
    }
    if let Some(w) = &m.class_weights {
        for (c, row) in w.iter().enumerate() {
            for (name, (mean, std)) in modality_names.iter().zip(row) {
                let _ = writeln!(out, "weight,{c},{name},{mean},{std}");
            }
        }
    }
    for (e, l) in m.loss_curve.iter().enumerate() {
        let _ = writeln!(out, "loss,{e},,{l},");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Baseline,
    Mask(usize),
    Noise,
}

impl Scenario {
    pub fn name(&self, modality_names: &[String]) -> String {
        match self {
            Scenario::Baseline => "baseline".into(),
            Scenario::Mask(m) => format!("mask-{}", modality_names[*m]),
            Scenario::Noise => "noise".into(),
        }
    }

    /// `baseline`, `noise`, `mask-<modality>` or `all` (baseline, every
    /// mask, and noise when a text modality exists).
    pub fn parse(s: &str, modality_names: &[String], has_text: bool) -> Result<Vec<Scenario>> {
        match s {
            "baseline" => Ok(vec![Scenario::Baseline]),
            "noise" if has_text => Ok(vec![Scenario::Noise]),
            "all" => {
                let mut v = vec![Scenario::Baseline];
                v.extend((0..modality_names.len()).map(Scenario::Mask));
                if has_text {
                    v.push(Scenario::Noise);
                }
                Ok(v)
            }
            other => other
                .strip_prefix("mask-")
                .and_then(|m| modality_names.iter().position(|n| n == m))
                .map(|m| vec![Scenario::Mask(m)])
                .ok_or_else(|| HarnessError::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub scenario: String,
    pub class: usize,
    pub modality: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Test-set plan where every sample suffers the scenario's corruption.
pub fn scenario_plan(prep: &Prepared, scenario: Scenario, seed: u64) -> Result<CorruptionPlan> {
    let ids = prep.ids(&prep.test);
    let n = prep.n_modalities();
    Ok(match scenario {
        Scenario::Baseline | Scenario::Mask(_) => CorruptionPlan {
            seed,
            eta: if scenario == Scenario::Baseline {
                1.0
            } else {
                0.0
            },
            noise_rate: 0.0,
            n_modalities: n,
            entries: ids
                .into_iter()
                .map(|sample_id| PlanEntry {
                    sample_id,
                    masked_modality: match scenario {
                        Scenario::Mask(m) => Some(m),
                        _ => None,
                    },
                    noised_slot: None,
                })
                .collect(),
        },
        Scenario::Noise => plan_for(
            prep,
            &prep.test,
            1.0,
            1.0,
            derive_seed(seed, "noise-scenario"),
        )?,
    })
}

/// Mean and std of MDA weights per (scenario, class, modality) over the test set.
pub fn weight_report(
    prep: &Prepared,
    unis: &[UniModel],
    cache: &PhiCache,
    model: &FusionModel,
    scenarios: &[Scenario],
    seed: u64,
) -> Result<Vec<WeightRow>> {
    let names: Vec<String> = prep
        .dataset
        .modalities
        .iter()
        .map(|m| m.to_string())
        .collect();
    let mut rows = Vec::new();
    for &s in scenarios {
        let plan = scenario_plan(prep, s, seed)?;
        let pred = predict_fusion(prep, unis, cache, model, &prep.test, &plan)?;
        let w = pred.weights.ok_or_else(|| {
            HarnessError::Config(format!("{} fusion has no modality weights", model.kind))
        })?;
        for c in 0..prep.classes() {
            let members: Vec<&Vec<f64>> = w
                .iter()
                .zip(&pred.labels)
                .filter(|(_, &l)| l == c)
                .map(|(r, _)| r)
                .collect();
            for (m, name) in names.iter().enumerate() {
                let vals: Vec<f64> = members.iter().map(|r| r[m]).collect();
                let (mean, std) = mean_std(&vals);
                rows.push(WeightRow {
                    scenario: s.name(&names),
                    class: c,
                    modality: name.clone(),
                    mean,
                    std,
                    count: vals.len(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn weight_csv(rows: &[WeightRow]) -> String {
    let mut out = String::from("scenario,class,modality,mean,std,count\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.scenario, r.class, r.modality, r.mean, r.std, r.count
        );
    }
    out
}

/// One line per (scenario, class), one `mean±std` column per modality.
pub fn weight_table(rows: &[WeightRow]) -> String {
    let mut modalities: Vec<&str> = Vec::new();
    for r in rows {
        if !modalities.contains(&r.modality.as_str()) {
            modalities.push(&r.modality);
        }
    }
    let mut out = format!("{:<16} {:>5}", "scenario", "class");
    for m in &modalities {
        let _ = write!(out, " {m:>13}");
    }
    out.push('\n');
    for group in rows.chunks(modalities.len().max(1)) {
        let _ = write!(out, "{:<16} {:>5}", group[0].scenario, group[0].class);
        for r in group {
            let _ = write!(out, " {:>13}", format!("{:.3}±{:.3}", r.mean, r.std));
        }
        out.push('\n');
    }
    out
}
