//! Central finite-difference verification of tape gradients (64-bit only).

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

const STEP: f64 = 1e-5;
/// Denominator floor so that near-zero gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn sample_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        (0..max).map(|i| i * n / max + (n / max) / 2).collect()
    }
}

fn evaluate<F>(f: &F, params: &[(String, Tensor<f64>)]) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(Error::shape("grad_check needs a scalar-valued function"));
    }
    Ok((g, vars, out))
}

/// Compares tape gradients with central differences for up to
/// `max_samples` elements of every named parameter tensor.
pub fn grad_check_report<F>(f: F, params: &[(&str, Tensor<f64>)], max_samples: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut owned: Vec<(String, Tensor<f64>)> =
        params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    let (g, vars, out) = evaluate(&f, &owned)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(&owned)
        .map(|(&v, (_, t))| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.dims())))
        .collect();

    let mut report = GradCheckReport::default();
    for p in 0..owned.len() {
        let mut worst = 0.0f64;
        let picks = sample_indices(owned[p].1.numel(), max_samples);
        for &i in &picks {
            let orig = owned[p].1.data()[i];
            owned[p].1.data_mut()[i] = orig + STEP;
            let (gp, _, op) = evaluate(&f, &owned)?;
            let plus = gp.value(op).data()[0];
            owned[p].1.data_mut()[i] = orig - STEP;
            let (gm, _, om) = evaluate(&f, &owned)?;
            let minus = gm.value(om).data()[0];
            owned[p].1.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[p].data()[i], numeric));
        }
        report.tensors.push(TensorCheck {
            name: owned[p].0.clone(),
            checked: picks.len(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}

/// Like [`grad_check_report`], failing with [`Error::GradCheck`] naming the
/// worst tensor when its relative error reaches `tol`.
pub fn grad_check<F>(f: F, params: &[(&str, Tensor<f64>)], tol: f64, max_samples: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let report = grad_check_report(f, params, max_samples)?;
    if let Some(w) = report.worst() {
        if w.max_rel_error >= tol {
            return Err(Error::GradCheck {
                op: w.name.clone(),
                error: w.max_rel_error,
                tol,
            });
        }
    }
    Ok(report)
}
