use crate::error::{Error, Result};
use crate::numerics::{sigmoid, DiagMatrix, Matrix, RngStream, Vector};
use crate::params::{tensor_list, ParamRole, Parameters, TensorView, TensorViewMut};

use super::uniform_matrix;

/// LSTM with diagonal peepholes. The input and forget gates read the previous
/// memory cell, the output gate reads the updated one.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_o: Matrix,
    pub w_c: Matrix,
    pub u_i: Matrix,
    pub u_f: Matrix,
    pub u_o: Matrix,
    pub u_c: Matrix,
    pub v_i: DiagMatrix,
    pub v_f: DiagMatrix,
    pub v_o: DiagMatrix,
    pub b_i: Vector,
    pub b_f: Vector,
    pub b_o: Vector,
    pub b_c: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vector,
    pub c: Vector,
}

impl LstmState {
    pub fn zeros(n: usize) -> Self {
        LstmState {
            h: Vector::zeros(n),
            c: Vector::zeros(n),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LstmTrace {
    pub x: Vector,
    pub h_prev: Vector,
    pub c_prev: Vector,
    /// Candidate memory content.
    pub c_tilde: Vector,
    pub i: Vector,
    pub f: Vector,
    pub o: Vector,
    pub c: Vector,
    pub tanh_c: Vector,
    pub h: Vector,
}

pub const FORGET_BIAS_INIT: f64 = 1.0;

impl LstmParams {
    pub fn zeros(n: usize, d: usize) -> Self {
        LstmParams {
            w_i: Matrix::zeros(n, d),
            w_f: Matrix::zeros(n, d),
            w_o: Matrix::zeros(n, d),
            w_c: Matrix::zeros(n, d),
            u_i: Matrix::zeros(n, n),
            u_f: Matrix::zeros(n, n),
            u_o: Matrix::zeros(n, n),
            u_c: Matrix::zeros(n, n),
            v_i: DiagMatrix::zeros(n),
            v_f: DiagMatrix::zeros(n),
            v_o: DiagMatrix::zeros(n),
            b_i: Vector::zeros(n),
            b_f: Vector::zeros(n),
            b_o: Vector::zeros(n),
            b_c: Vector::zeros(n),
        }
    }

    pub fn init(n: usize, d: usize, rng: &mut RngStream, scale: f64) -> Self {
        let mut p = LstmParams::zeros(n, d);
        for w in [&mut p.w_i, &mut p.w_f, &mut p.w_o, &mut p.w_c] {
            *w = uniform_matrix(rng, n, d, scale);
        }
        for u in [&mut p.u_i, &mut p.u_f, &mut p.u_o, &mut p.u_c] {
            *u = uniform_matrix(rng, n, n, scale);
        }
        // peepholes share the recurrent fan-in
        for v in [&mut p.v_i, &mut p.v_f, &mut p.v_o] {
            let m = uniform_matrix(rng, n, 1, scale / (n as f64).sqrt());
            v.diag = Vector::from(m.as_slice().to_vec());
        }
        p.b_f.fill(FORGET_BIAS_INIT);
        p
    }

    pub fn hidden_size(&self) -> usize {
        self.u_i.rows()
    }

    pub fn input_size(&self) -> usize {
        self.w_i.cols()
    }

    pub(crate) fn check(&self, s: &LstmState, x: &Vector) -> Result<()> {
        let n = self.hidden_size();
        if s.h.len() != n || s.c.len() != n {
            return Err(Error::shape(
                "lstm_step (state)",
                format!("h and c of length {n}"),
                format!("h {} / c {}", s.h.len(), s.c.len()),
            ));
        }
        if x.len() != self.input_size() {
            return Err(Error::shape("lstm_step (x)", self.input_size(), x.len()));
        }
        Ok(())
    }

    fn affine(&self, w: &Matrix, u: &Matrix, b: &Vector, x: &Vector, h: &Vector) -> Vector {
        let mut a = b.clone();
        w.gemv_acc(x, &mut a);
        u.gemv_acc(h, &mut a);
        a
    }

    pub(crate) fn step_unchecked(&self, s: &LstmState, x: &Vector) -> LstmTrace {
        let n = self.hidden_size();
        let c_prev = &s.c;

        let mut c_tilde = self.affine(&self.w_c, &self.u_c, &self.b_c, x, &s.h);
        c_tilde.iter_mut().for_each(|v| *v = v.tanh());

        let mut f = self.affine(&self.w_f, &self.u_f, &self.b_f, x, &s.h);
        let mut i = self.affine(&self.w_i, &self.u_i, &self.b_i, x, &s.h);
        for j in 0..n {
            f[j] = sigmoid(f[j] + self.v_f.diag[j] * c_prev[j]);
            i[j] = sigmoid(i[j] + self.v_i.diag[j] * c_prev[j]);
        }

        let c: Vector = (0..n)
            .map(|j| f[j] * c_prev[j] + i[j] * c_tilde[j])
            .collect();

        let mut o = self.affine(&self.w_o, &self.u_o, &self.b_o, x, &s.h);
        for j in 0..n {
            o[j] = sigmoid(o[j] + self.v_o.diag[j] * c[j]);
        }
        let tanh_c = c.map(f64::tanh);
        let h: Vector = (0..n).map(|j| o[j] * tanh_c[j]).collect();

        LstmTrace {
            x: x.clone(),
            h_prev: s.h.clone(),
            c_prev: c_prev.clone(),
            c_tilde,
            i,
            f,
            o,
            c,
            tanh_c,
            h,
        }
    }

    /// Accumulates into `grads`; returns `(grad_h_prev, grad_c_prev, grad_x)`.
    pub(crate) fn backstep_into(
        &self,
        t: &LstmTrace,
        grad_h: &[f64],
        grad_c: &[f64],
        grads: &mut LstmParams,
    ) -> (Vector, Vector, Vector) {
        let n = self.hidden_size();
        let mut da_o = Vector::zeros(n);
        let mut da_f = Vector::zeros(n);
        let mut da_i = Vector::zeros(n);
        let mut da_c = Vector::zeros(n);
        let mut grad_c_prev = Vector::zeros(n);

        for j in 0..n {
            let o = t.o[j];
            da_o[j] = grad_h[j] * t.tanh_c[j] * o * (1.0 - o);
            let dc = grad_c[j]
                + grad_h[j] * o * (1.0 - t.tanh_c[j] * t.tanh_c[j])
                + da_o[j] * self.v_o.diag[j];
            let f = t.f[j];
            let i = t.i[j];
            da_f[j] = dc * t.c_prev[j] * f * (1.0 - f);
            da_i[j] = dc * t.c_tilde[j] * i * (1.0 - i);
            da_c[j] = dc * i * (1.0 - t.c_tilde[j] * t.c_tilde[j]);
            grad_c_prev[j] = dc * f + da_f[j] * self.v_f.diag[j] + da_i[j] * self.v_i.diag[j];

            grads.v_o.diag[j] += da_o[j] * t.c[j];
            grads.v_f.diag[j] += da_f[j] * t.c_prev[j];
            grads.v_i.diag[j] += da_i[j] * t.c_prev[j];
        }

        let mut grad_h_prev = Vector::zeros(n);
        let mut grad_x = Vector::zeros(self.input_size());
        let gates = [
            (&da_i, &self.w_i, &self.u_i, &mut grads.w_i, &mut grads.u_i, &mut grads.b_i),
            (&da_f, &self.w_f, &self.u_f, &mut grads.w_f, &mut grads.u_f, &mut grads.b_f),
            (&da_o, &self.w_o, &self.u_o, &mut grads.w_o, &mut grads.u_o, &mut grads.b_o),
            (&da_c, &self.w_c, &self.u_c, &mut grads.w_c, &mut grads.u_c, &mut grads.b_c),
        ];
        for (da, w, u, gw, gu, gb) in gates {
            gw.rank1_acc(da, &t.x);
            gu.rank1_acc(da, &t.h_prev);
            gb.iter_mut().zip(da.iter()).for_each(|(b, d)| *b += d);
            u.gemv_t_acc(da, &mut grad_h_prev);
            w.gemv_t_acc(da, &mut grad_x);
        }
        (grad_h_prev, grad_c_prev, grad_x)
    }
}

impl Parameters for LstmParams {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        tensor_list!(self, TensorView,
            w_i => "cell.W_i": Weight,
            w_f => "cell.W_f": Weight,
            w_o => "cell.W_o": Weight,
            w_c => "cell.W_c": Weight,
            u_i => "cell.U_i": Weight,
            u_f => "cell.U_f": Weight,
            u_o => "cell.U_o": Weight,
            u_c => "cell.U_c": Weight,
            v_i.diag => "cell.V_i": Peephole,
            v_f.diag => "cell.V_f": Peephole,
            v_o.diag => "cell.V_o": Peephole,
            b_i => "cell.b_i": Bias,
            b_f => "cell.b_f": Bias,
            b_o => "cell.b_o": Bias,
            b_c => "cell.b_c": Bias,
        )
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        tensor_list!(self, TensorViewMut,
            w_i => "cell.W_i": Weight,
            w_f => "cell.W_f": Weight,
            w_o => "cell.W_o": Weight,
            w_c => "cell.W_c": Weight,
            u_i => "cell.U_i": Weight,
            u_f => "cell.U_f": Weight,
            u_o => "cell.U_o": Weight,
            u_c => "cell.U_c": Weight,
            v_i.diag => "cell.V_i": Peephole,
            v_f.diag => "cell.V_f": Peephole,
            v_o.diag => "cell.V_o": Peephole,
            b_i => "cell.b_i": Bias,
            b_f => "cell.b_f": Bias,
            b_o => "cell.b_o": Bias,
            b_c => "cell.b_c": Bias,
        )
    }
}

pub fn lstm_step(p: &LstmParams, s: &LstmState, x: &Vector) -> Result<(LstmState, LstmTrace)> {
    p.check(s, x)?;
    let trace = p.step_unchecked(s, x);
    let next = LstmState {
        h: trace.h.clone(),
        c: trace.c.clone(),
    };
    Ok((next, trace))
}
