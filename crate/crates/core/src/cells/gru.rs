use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix, RngStream, Vector};
use crate::params::{tensor_list, ParamRole, Parameters, TensorView, TensorViewMut};

use super::uniform_matrix;

/// Where the reset gate acts in the candidate activation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum GruVariant {
    /// `tanh(W x + U (r ⊙ h_prev) + b)`
    #[default]
    CandidateGated,
    /// `tanh(W x + r ⊙ (U h_prev) + b)`, the originally proposed form.
    ProjectionGated,
}

impl GruVariant {
    pub const ALL: [GruVariant; 2] = [GruVariant::CandidateGated, GruVariant::ProjectionGated];

    pub fn as_str(self) -> &'static str {
        match self {
            GruVariant::CandidateGated => "candidate",
            GruVariant::ProjectionGated => "projection",
        }
    }
}

impl fmt::Display for GruVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GruVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "candidate" | "candidate-gated" => Ok(GruVariant::CandidateGated),
            "projection" | "projection-gated" => Ok(GruVariant::ProjectionGated),
            other => Err(Error::Config(format!(
                "unknown GRU variant {other:?} (expected candidate|projection)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u: Matrix,
    pub b_z: Vector,
    pub b_r: Vector,
    pub b: Vector,
}

#[derive(Clone, Debug)]
pub struct GruTrace {
    pub variant: GruVariant,
    pub x: Vector,
    pub h_prev: Vector,
    pub z: Vector,
    pub r: Vector,
    /// `r ⊙ h_prev` for the candidate-gated form, `U h_prev` for the projection form.
    pub gated: Vector,
    pub h_tilde: Vector,
    pub h: Vector,
}

impl GruParams {
    pub fn zeros(n: usize, d: usize) -> Self {
        GruParams {
            w_z: Matrix::zeros(n, d),
            w_r: Matrix::zeros(n, d),
            w: Matrix::zeros(n, d),
            u_z: Matrix::zeros(n, n),
            u_r: Matrix::zeros(n, n),
            u: Matrix::zeros(n, n),
            b_z: Vector::zeros(n),
            b_r: Vector::zeros(n),
            b: Vector::zeros(n),
        }
    }

    pub fn init(n: usize, d: usize, rng: &mut RngStream, scale: f64) -> Self {
        let mut p = GruParams::zeros(n, d);
        for w in [&mut p.w_z, &mut p.w_r, &mut p.w] {
            *w = uniform_matrix(rng, n, d, scale);
        }
        for u in [&mut p.u_z, &mut p.u_r, &mut p.u] {
            *u = uniform_matrix(rng, n, n, scale);
        }
        p
    }

    pub fn hidden_size(&self) -> usize {
        self.u.rows()
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub(crate) fn check(&self, h_prev: &Vector, x: &Vector) -> Result<()> {
        if h_prev.len() != self.hidden_size() {
            return Err(Error::shape("gru_step (h_prev)", self.hidden_size(), h_prev.len()));
        }
        if x.len() != self.input_size() {
            return Err(Error::shape("gru_step (x)", self.input_size(), x.len()));
        }
        Ok(())
    }

    pub(crate) fn step_unchecked(&self, h_prev: &Vector, x: &Vector, variant: GruVariant) -> GruTrace {
        let n = self.hidden_size();
        let gate = |w: &Matrix, u: &Matrix, b: &Vector| {
            let mut a = b.clone();
            w.gemv_acc(x, &mut a);
            u.gemv_acc(h_prev, &mut a);
            a.iter_mut().for_each(|v| *v = sigmoid(*v));
            a
        };
        let z = gate(&self.w_z, &self.u_z, &self.b_z);
        let r = gate(&self.w_r, &self.u_r, &self.b_r);

        let mut a = self.b.clone();
        self.w.gemv_acc(x, &mut a);
        let gated = match variant {
            GruVariant::CandidateGated => {
                let rh: Vector = (0..n).map(|j| r[j] * h_prev[j]).collect();
                self.u.gemv_acc(&rh, &mut a);
                rh
            }
            GruVariant::ProjectionGated => {
                let mut uh = Vector::zeros(n);
                self.u.gemv_acc(h_prev, &mut uh);
                for j in 0..n {
                    a[j] += r[j] * uh[j];
                }
                uh
            }
        };
        let h_tilde = a.map(f64::tanh);
        let h: Vector = (0..n)
            .map(|j| (1.0 - z[j]) * h_prev[j] + z[j] * h_tilde[j])
            .collect();

        GruTrace {
            variant,
            x: x.clone(),
            h_prev: h_prev.clone(),
            z,
            r,
            gated,
            h_tilde,
            h,
        }
    }

    /// Accumulates into `grads`; returns `(grad_h_prev, grad_x)`.
    pub(crate) fn backstep_into(
        &self,
        t: &GruTrace,
        grad_h: &[f64],
        grads: &mut GruParams,
    ) -> (Vector, Vector) {
        let n = self.hidden_size();
        let mut da_z = Vector::zeros(n);
        let mut da = Vector::zeros(n);
        let mut grad_h_prev = Vector::zeros(n);
        for j in 0..n {
            let z = t.z[j];
            da_z[j] = grad_h[j] * (t.h_tilde[j] - t.h_prev[j]) * z * (1.0 - z);
            da[j] = grad_h[j] * z * (1.0 - t.h_tilde[j] * t.h_tilde[j]);
            grad_h_prev[j] = grad_h[j] * (1.0 - z);
        }

        let mut grad_x = Vector::zeros(self.input_size());
        grads.w.rank1_acc(&da, &t.x);
        grads.b.iter_mut().zip(da.iter()).for_each(|(b, d)| *b += d);
        self.w.gemv_t_acc(&da, &mut grad_x);

        let mut da_r = Vector::zeros(n);
        match t.variant {
            GruVariant::CandidateGated => {
                grads.u.rank1_acc(&da, &t.gated);
                let mut d_rh = Vector::zeros(n);
                self.u.gemv_t_acc(&da, &mut d_rh);
                for j in 0..n {
                    let r = t.r[j];
                    da_r[j] = d_rh[j] * t.h_prev[j] * r * (1.0 - r);
                    grad_h_prev[j] += d_rh[j] * r;
                }
            }
            GruVariant::ProjectionGated => {
                let mut d_uh = Vector::zeros(n);
                for j in 0..n {
                    let r = t.r[j];
                    da_r[j] = da[j] * t.gated[j] * r * (1.0 - r);
                    d_uh[j] = da[j] * r;
                }
                grads.u.rank1_acc(&d_uh, &t.h_prev);
                self.u.gemv_t_acc(&d_uh, &mut grad_h_prev);
            }
        }

        let gates = [
            (&da_z, &self.w_z, &self.u_z, &mut grads.w_z, &mut grads.u_z, &mut grads.b_z),
            (&da_r, &self.w_r, &self.u_r, &mut grads.w_r, &mut grads.u_r, &mut grads.b_r),
        ];
        for (dg, w, u, gw, gu, gb) in gates {
            gw.rank1_acc(dg, &t.x);
            gu.rank1_acc(dg, &t.h_prev);
            gb.iter_mut().zip(dg.iter()).for_each(|(b, d)| *b += d);
            u.gemv_t_acc(dg, &mut grad_h_prev);
            w.gemv_t_acc(dg, &mut grad_x);
        }
        (grad_h_prev, grad_x)
    }
}

impl Parameters for GruParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        tensor_list!(self, TensorView,
            w_z => "cell.W_z": Weight,
            w_r => "cell.W_r": Weight,
            w => "cell.W": Weight,
            u_z => "cell.U_z": Weight,
            u_r => "cell.U_r": Weight,
            u => "cell.U": Weight,
            b_z => "cell.b_z": Bias,
            b_r => "cell.b_r": Bias,
            b => "cell.b": Bias,
        )
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        tensor_list!(self, TensorViewMut,
            w_z => "cell.W_z": Weight,
            w_r => "cell.W_r": Weight,
            w => "cell.W": Weight,
            u_z => "cell.U_z": Weight,
            u_r => "cell.U_r": Weight,
            u => "cell.U": Weight,
            b_z => "cell.b_z": Bias,
            b_r => "cell.b_r": Bias,
            b => "cell.b": Bias,
        )
    }
}

pub fn gru_step(
    p: &GruParams,
    h_prev: &Vector,
    x: &Vector,
    variant: GruVariant,
) -> Result<(Vector, GruTrace)> {
    p.check(h_prev, x)?;
    let trace = p.step_unchecked(h_prev, x, variant);
    Ok((trace.h.clone(), trace))
}
