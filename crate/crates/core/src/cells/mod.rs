//! The three recurrent unit types: forward step, single-step backward pass,
//! initialization and parameter accounting.

mod gru;
mod lstm;
mod tanh;

use std::fmt;
use std::str::FromStr;

pub use gru::{gru_step, GruParams, GruTrace, GruVariant};
pub use lstm::{lstm_step, LstmParams, LstmState, LstmTrace, FORGET_BIAS_INIT};
pub use tanh::{tanh_step, TanhParams, TanhTrace};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream, Vector};
use crate::params::{Parameters, TensorView, TensorViewMut};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    Tanh,
    Lstm,
    Gru,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Tanh, CellKind::Lstm, CellKind::Gru];

    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Tanh => "tanh",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tanh" => Ok(CellKind::Tanh),
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::Config(format!(
                "unknown cell kind {other:?} (expected tanh|lstm|gru)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellParams {
    Tanh(TanhParams),
    Lstm(LstmParams),
    Gru(GruParams),
}

/// Recurrent state carried between steps. `h_0` (and `c_0`) are zero.
#[derive(Clone, Debug, PartialEq)]
pub enum RecurrentState {
    Hidden(Vector),
    Lstm(LstmState),
}

impl RecurrentState {
    pub fn h(&self) -> &Vector {
        match self {
            RecurrentState::Hidden(h) => h,
            RecurrentState::Lstm(s) => &s.h,
        }
    }
}

#[derive(Clone, Debug)]
pub enum StepTrace {
    Tanh(TanhTrace),
    Lstm(LstmTrace),
    Gru(GruTrace),
}

impl StepTrace {
    pub fn kind(&self) -> CellKind {
        match self {
            StepTrace::Tanh(_) => CellKind::Tanh,
            StepTrace::Lstm(_) => CellKind::Lstm,
            StepTrace::Gru(_) => CellKind::Gru,
        }
    }

    pub fn h(&self) -> &Vector {
        match self {
            StepTrace::Tanh(t) => &t.h,
            StepTrace::Lstm(t) => &t.h,
            StepTrace::Gru(t) => &t.h,
        }
    }

    pub fn state(&self) -> RecurrentState {
        match self {
            StepTrace::Tanh(t) => RecurrentState::Hidden(t.h.clone()),
            StepTrace::Gru(t) => RecurrentState::Hidden(t.h.clone()),
            StepTrace::Lstm(t) => RecurrentState::Lstm(LstmState {
                h: t.h.clone(),
                c: t.c.clone(),
            }),
        }
    }
}

/// Output of [`cell_backstep`].
#[derive(Clone, Debug)]
pub struct CellBackstep {
    pub grads: CellParams,
    pub grad_h_prev: Vector,
    /// Present for LSTM only.
    pub grad_c_prev: Option<Vector>,
    pub grad_x: Vector,
}

pub(crate) fn uniform_matrix(rng: &mut RngStream, rows: usize, cols: usize, scale: f64) -> Matrix {
    let limit = scale / (cols as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.uniform_range(-limit, limit))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

/// Random initialization. Weights are `Uniform(±scale/√fan_in)`; biases are
/// zero except the LSTM forget-gate bias, which starts at +1.
pub fn init_params(kind: CellKind, n: usize, d: usize, rng: &mut RngStream, scale: f64) -> Result<CellParams> {
    if n == 0 || d == 0 {
        return Err(Error::Param(format!("cell sizes must be >= 1 (n={n}, d={d})")));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Param(format!("init scale must be > 0, got {scale}")));
    }
    Ok(match kind {
        CellKind::Tanh => CellParams::Tanh(TanhParams::init(n, d, rng, scale)),
        CellKind::Lstm => CellParams::Lstm(LstmParams::init(n, d, rng, scale)),
        CellKind::Gru => CellParams::Gru(GruParams::init(n, d, rng, scale)),
    })
}

/// Recurrent-cell parameter count (output layer excluded).
pub fn count_params(kind: CellKind, n: usize, d: usize) -> usize {
    let block = n * d + n * n + n;
    match kind {
        CellKind::Tanh => block,
        CellKind::Gru => 3 * block,
        CellKind::Lstm => 4 * block + 3 * n,
    }
}

/// Largest hidden size whose cell fits within `budget` parameters.
pub fn param_budget_to_units(kind: CellKind, d: usize, budget: usize) -> Result<usize> {
    if d == 0 {
        return Err(Error::Param("input size must be >= 1".into()));
    }
    let minimum = count_params(kind, 1, d);
    if budget < minimum {
        return Err(Error::Param(format!(
            "budget {budget} is below the smallest {kind} cell ({minimum} parameters at d={d})"
        )));
    }
    // count_params is strictly increasing in n, so a doubling search then bisection suffices.
    let mut lo = 1usize;
    let mut hi = 2usize;
    while count_params(kind, hi, d) <= budget {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if count_params(kind, mid, d) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

impl CellParams {
    pub fn zeros(kind: CellKind, n: usize, d: usize) -> Self {
        match kind {
            CellKind::Tanh => CellParams::Tanh(TanhParams::zeros(n, d)),
            CellKind::Lstm => CellParams::Lstm(LstmParams::zeros(n, d)),
            CellKind::Gru => CellParams::Gru(GruParams::zeros(n, d)),
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Tanh(_) => CellKind::Tanh,
            CellParams::Lstm(_) => CellKind::Lstm,
            CellParams::Gru(_) => CellKind::Gru,
        }
    }

    pub fn hidden_size(&self) -> usize {
        match self {
            CellParams::Tanh(p) => p.hidden_size(),
            CellParams::Lstm(p) => p.hidden_size(),
            CellParams::Gru(p) => p.hidden_size(),
        }
    }

    pub fn input_size(&self) -> usize {
        match self {
            CellParams::Tanh(p) => p.input_size(),
            CellParams::Lstm(p) => p.input_size(),
            CellParams::Gru(p) => p.input_size(),
        }
    }

    pub fn zero_like(&self) -> Self {
        CellParams::zeros(self.kind(), self.hidden_size(), self.input_size())
    }

    pub fn initial_state(&self) -> RecurrentState {
        let n = self.hidden_size();
        match self {
            CellParams::Lstm(_) => RecurrentState::Lstm(LstmState::zeros(n)),
            _ => RecurrentState::Hidden(Vector::zeros(n)),
        }
    }

    /// One forward step from `state`, checked against shapes.
    pub fn step(&self, state: &RecurrentState, x: &Vector, variant: GruVariant) -> Result<StepTrace> {
        match (self, state) {
            (CellParams::Tanh(p), RecurrentState::Hidden(h)) => {
                p.check(h, x)?;
                Ok(StepTrace::Tanh(p.step_unchecked(h, x)))
            }
            (CellParams::Gru(p), RecurrentState::Hidden(h)) => {
                p.check(h, x)?;
                Ok(StepTrace::Gru(p.step_unchecked(h, x, variant)))
            }
            (CellParams::Lstm(p), RecurrentState::Lstm(s)) => {
                p.check(s, x)?;
                Ok(StepTrace::Lstm(p.step_unchecked(s, x)))
            }
            _ => Err(Error::Contract(format!(
                "{} cell cannot consume this recurrent state",
                self.kind()
            ))),
        }
    }

    /// Backward through one step, accumulating parameter gradients into `grads`.
    /// Returns `(grad_h_prev, grad_c_prev, grad_x)`.
    pub(crate) fn backstep_into(
        &self,
        trace: &StepTrace,
        grad_h: &[f64],
        grad_c: Option<&[f64]>,
        grads: &mut CellParams,
    ) -> Result<(Vector, Option<Vector>, Vector)> {
        match (self, trace, grads) {
            (CellParams::Tanh(p), StepTrace::Tanh(t), CellParams::Tanh(g)) => {
                if grad_c.is_some() {
                    return Err(Error::Contract("grad_c given for a tanh cell".into()));
                }
                let (gh, gx) = p.backstep_into(t, grad_h, g);
                Ok((gh, None, gx))
            }
            (CellParams::Gru(p), StepTrace::Gru(t), CellParams::Gru(g)) => {
                if grad_c.is_some() {
                    return Err(Error::Contract("grad_c given for a GRU cell".into()));
                }
                let (gh, gx) = p.backstep_into(t, grad_h, g);
                Ok((gh, None, gx))
            }
            (CellParams::Lstm(p), StepTrace::Lstm(t), CellParams::Lstm(g)) => {
                let zeros;
                let grad_c = match grad_c {
                    Some(gc) => gc,
                    None => {
                        zeros = vec![0.0; p.hidden_size()];
                        &zeros
                    }
                };
                let (gh, gc, gx) = p.backstep_into(t, grad_h, grad_c, g);
                Ok((gh, Some(gc), gx))
            }
            (p, t, _) => Err(Error::Contract(format!(
                "{} parameters cannot be differentiated with a {} trace",
                p.kind(),
                t.kind()
            ))),
        }
    }
}

/// Exact reverse-mode step: given the sensitivities of a scalar loss to this
/// step's outputs (`grad_h`, plus `grad_c` for LSTM), returns the parameter
/// gradients and the sensitivities to the step's inputs.
pub fn cell_backstep(
    params: &CellParams,
    trace: &StepTrace,
    grad_h: &Vector,
    grad_c: Option<&Vector>,
) -> Result<CellBackstep> {
    let n = params.hidden_size();
    if grad_h.len() != n {
        return Err(Error::shape("cell_backstep (grad_h)", n, grad_h.len()));
    }
    if let Some(gc) = grad_c {
        if gc.len() != n {
            return Err(Error::shape("cell_backstep (grad_c)", n, gc.len()));
        }
    }
    let mut grads = params.zero_like();
    let (grad_h_prev, grad_c_prev, grad_x) =
        params.backstep_into(trace, grad_h, grad_c.map(|g| g.as_slice()), &mut grads)?;
    Ok(CellBackstep {
        grads,
        grad_h_prev,
        grad_c_prev,
        grad_x,
    })
}

impl Parameters for CellParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        match self {
            CellParams::Tanh(p) => p.tensors(),
            CellParams::Lstm(p) => p.tensors(),
            CellParams::Gru(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        match self {
            CellParams::Tanh(p) => p.tensors_mut(),
            CellParams::Lstm(p) => p.tensors_mut(),
            CellParams::Gru(p) => p.tensors_mut(),
        }
    }
}
