use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream, Vector};
use crate::params::{tensor_list, ParamRole, Parameters, TensorView, TensorViewMut};

use super::uniform_matrix;

/// Plain recurrent unit: `h = tanh(W x + U h_prev + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TanhParams {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vector,
}

#[derive(Clone, Debug)]
pub struct TanhTrace {
    pub x: Vector,
    pub h_prev: Vector,
    pub h: Vector,
}

impl TanhParams {
    pub fn zeros(n: usize, d: usize) -> Self {
        TanhParams {
            w: Matrix::zeros(n, d),
            u: Matrix::zeros(n, n),
            b: Vector::zeros(n),
        }
    }

    pub fn init(n: usize, d: usize, rng: &mut RngStream, scale: f64) -> Self {
        TanhParams {
            w: uniform_matrix(rng, n, d, scale),
            u: uniform_matrix(rng, n, n, scale),
            b: Vector::zeros(n),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.u.rows()
    }

    pub fn input_size(&self) -> usize {
        self.w.cols()
    }

    pub(crate) fn check(&self, h_prev: &Vector, x: &Vector) -> Result<()> {
        if h_prev.len() != self.hidden_size() {
            return Err(Error::shape("tanh_step (h_prev)", self.hidden_size(), h_prev.len()));
        }
        if x.len() != self.input_size() {
            return Err(Error::shape("tanh_step (x)", self.input_size(), x.len()));
        }
        Ok(())
    }

    pub(crate) fn step_unchecked(&self, h_prev: &Vector, x: &Vector) -> TanhTrace {
        let mut a = self.b.clone();
        self.w.gemv_acc(x, &mut a);
        self.u.gemv_acc(h_prev, &mut a);
        a.iter_mut().for_each(|v| *v = v.tanh());
        TanhTrace {
            x: x.clone(),
            h_prev: h_prev.clone(),
            h: a,
        }
    }

    /// Accumulates parameter gradients into `grads` and returns `(grad_h_prev, grad_x)`.
    pub(crate) fn backstep_into(
        &self,
        trace: &TanhTrace,
        grad_h: &[f64],
        grads: &mut TanhParams,
    ) -> (Vector, Vector) {
        let da: Vector = grad_h
            .iter()
            .zip(trace.h.iter())
            .map(|(g, h)| g * (1.0 - h * h))
            .collect();
        grads.w.rank1_acc(&da, &trace.x);
        grads.u.rank1_acc(&da, &trace.h_prev);
        grads.b.iter_mut().zip(da.iter()).for_each(|(b, d)| *b += d);

        let mut grad_h_prev = Vector::zeros(self.hidden_size());
        self.u.gemv_t_acc(&da, &mut grad_h_prev);
        let mut grad_x = Vector::zeros(self.input_size());
        self.w.gemv_t_acc(&da, &mut grad_x);
        (grad_h_prev, grad_x)
    }
}

impl Parameters for TanhParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        tensor_list!(self, TensorView,
            w => "cell.W": Weight,
            u => "cell.U": Weight,
            b => "cell.b": Bias,
        )
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        tensor_list!(self, TensorViewMut,
            w => "cell.W": Weight,
            u => "cell.U": Weight,
            b => "cell.b": Bias,
        )
    }
}

/// One step of the tanh unit.
pub fn tanh_step(p: &TanhParams, h_prev: &Vector, x: &Vector) -> Result<(Vector, TanhTrace)> {
    p.check(h_prev, x)?;
    let trace = p.step_unchecked(h_prev, x);
    Ok((trace.h.clone(), trace))
}
