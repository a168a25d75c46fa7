//! Central finite-difference check of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest relative disagreement between the tape gradient of `f` at `point`
/// and the central difference with step `h`, over every input coordinate:
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`.
///
/// `f` receives one tracked variable per entry of `point` and must return a
/// scalar node.
pub fn finite_diff_check<F>(f: F, point: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(finite_diff_worst(f, point, h)?.map_or(0.0, |w| w.relative_error))
}

/// Coordinate with the largest disagreement found by [`finite_diff_worst`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCoordinate {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

/// Like [`finite_diff_check`] but reports where the worst error occurred;
/// `None` when `point` has no coordinates.
pub fn finite_diff_worst<F>(f: F, point: &[Tensor], h: f64) -> Result<Option<WorstCoordinate>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(&f, point)?;
    let numeric = numeric_gradients(&f, point, h)?;
    let mut worst: Option<WorstCoordinate> = None;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (j, (&a, &numeric)) in a.data().iter().zip(n.data()).enumerate() {
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
            if worst.is_none_or(|w| rel > w.relative_error) {
                worst = Some(WorstCoordinate {
                    input: i,
                    index: j,
                    analytic: a,
                    numeric,
                    relative_error: rel,
                });
            }
        }
    }
    Ok(worst)
}

/// Largest per-input disagreement in norm,
/// `||analytic - numeric|| / (||analytic|| + ||numeric|| + 1e-12)`.
///
/// Unlike [`finite_diff_check`] this is not dominated by coordinates whose
/// gradient is below the rounding noise of the central difference.
pub fn finite_diff_tensor_check<F>(f: F, point: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(&f, point)?;
    let numeric = numeric_gradients(&f, point, h)?;
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            let diff = norm(&mut a.data().iter().zip(n.data()).map(|(x, y)| x - y));
            diff / (norm(&mut a.data().iter().copied())
                + norm(&mut n.data().iter().copied())
                + 1e-12)
        })
        .fold(0.0, f64::max))
}

fn analytic_gradients<F>(f: &F, point: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.variable(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    Ok(vars
        .iter()
        .map(|&v| grads.get(v).expect("inputs are tracked"))
        .collect())
}

fn numeric_gradients<F>(f: &F, point: &[Tensor], h: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |pt: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = pt.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::Contract(
                "finite_diff_check needs a scalar function".into(),
            ));
        }
        Ok(v.item())
    };
    let mut probe = point.to_vec();
    let mut grads = Vec::with_capacity(point.len());
    for (i, tensor) in point.iter().enumerate() {
        let mut g = Tensor::zeros(tensor.shape());
        for j in 0..tensor.len() {
            let orig = tensor.data()[j];
            probe[i].data_mut()[j] = orig + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            g.data_mut()[j] = (up - down) / (2.0 * h);
        }
        grads.push(g);
    }
    Ok(grads)
}
