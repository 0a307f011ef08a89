//! Central finite-difference oracle for certifying backward passes.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{bptt, sequence_nll, Gradients, SequenceBatchItem, SequenceModel};
use crate::params::{check_congruent, Parameters};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / a.abs().max(b.abs()).max(floor)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Param(format!("finite-difference epsilon must be > 0, got {epsilon}")));
    }
    Ok(())
}

/// `(loss(θ+εe_k) − loss(θ−εe_k)) / 2ε` for every coordinate k of a flat vector.
pub fn finite_diff_flat<F>(loss: F, theta: &[f64], epsilon: f64, exec: Execution) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync + Send,
{
    check_epsilon(epsilon)?;
    let eval = |probe: &[f64], k: usize, sign: &str| -> Result<f64> {
        let v = loss(probe)?;
        if !v.is_finite() {
            return Err(Error::Oracle(format!("loss is {v} at coordinate {k} ({sign}ε)")));
        }
        Ok(v)
    };
    exec.map_range(theta.len(), |k| {
        let mut probe = theta.to_vec();
        probe[k] = theta[k] + epsilon;
        let plus = eval(&probe, k, "+")?;
        probe[k] = theta[k] - epsilon;
        let minus = eval(&probe, k, "-")?;
        Ok((plus - minus) / (2.0 * epsilon))
    })
    .into_iter()
    .collect()
}

/// Finite-difference gradient of `loss` at `params`, returned as a tree of the same shape.
pub fn finite_diff<P, F>(loss: F, params: &P, epsilon: f64, exec: Execution) -> Result<P>
where
    P: Parameters + Clone + Sync,
    F: Fn(&P) -> Result<f64> + Sync + Send,
{
    let flat = finite_diff_flat(
        |theta| {
            let mut probe = params.clone();
            probe.set_flat(theta)?;
            loss(&probe)
        },
        &params.to_flat(),
        epsilon,
        exec,
    )?;
    let mut out = params.clone();
    out.set_flat(&flat)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// Tensor name and index within it.
    pub worst_parameter: (&'static str, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub num_checked: usize,
    /// Largest relative error per tensor, in tensor order.
    pub per_tensor: Vec<(&'static str, f64)>,
    /// (analytic, numeric) for every entry, in flat parameter order.
    pub entries: Vec<(f64, f64)>,
}

impl GradReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    /// Entries with `|a − b| > rtol·max(|a|, |b|) + atol`.
    pub fn violations(&self, rtol: f64, atol: f64) -> usize {
        self.entries
            .iter()
            .filter(|(a, b)| (a - b).abs() > rtol * a.abs().max(b.abs()) + atol)
            .count()
    }
}

/// Compares `analytic` against central differences of the total sequence NLL.
pub fn check_gradients_against(
    model: &SequenceModel,
    item: &SequenceBatchItem,
    analytic: &Gradients,
    epsilon: f64,
    exec: Execution,
) -> Result<GradReport> {
    check_congruent(model, analytic, "check_gradients_against")?;
    let numeric = finite_diff(|m: &SequenceModel| sequence_nll(m, item), model, epsilon, exec)?;
    compare(analytic, &numeric)
}

/// Certifies [`bptt`] on one sequence at zero weight noise.
pub fn check_model_gradients(
    model: &SequenceModel,
    item: &SequenceBatchItem,
    epsilon: f64,
) -> Result<GradReport> {
    let (analytic, _) = bptt(model, item)?;
    check_gradients_against(model, item, &analytic, epsilon, Execution::default())
}

fn compare(analytic: &impl Parameters, numeric: &impl Parameters) -> Result<GradReport> {
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst_parameter: ("", 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        num_checked: 0,
        per_tensor: Vec::new(),
        entries: Vec::with_capacity(analytic.num_values()),
    };
    for (a, n) in analytic.tensors().iter().zip(numeric.tensors()) {
        let mut tensor_max = 0.0f64;
        for (i, (&x, &y)) in a.values.iter().zip(n.values).enumerate() {
            let err = relative_error(x, y, RELATIVE_ERROR_FLOOR);
            tensor_max = tensor_max.max(err);
            if err > report.max_rel_error || report.num_checked == 0 {
                report.max_rel_error = err;
                report.worst_parameter = (a.name, i);
                report.worst_analytic = x;
                report.worst_numeric = y;
            }
            report.num_checked += 1;
            report.entries.push((x, y));
        }
        report.per_tensor.push((a.name, tensor_max));
    }
    if report.num_checked == 0 {
        return Err(Error::Oracle("no parameters to check".into()));
    }
    Ok(report)
}
