//! Named, flat views over parameter trees.
//!
//! Cells, heads, whole models and gradient trees all expose their tensors in
//! a fixed order. Optimizers, clipping, weight noise, checkpoints and the
//! finite-difference oracle are written once against this view.

use crate::error::{Error, Result};
use crate::numerics::norm_of_slices;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Peephole,
    Bias,
}

impl ParamRole {
    /// Weight noise is applied to weights and peepholes only.
    pub fn is_noisy(self) -> bool {
        !matches!(self, ParamRole::Bias)
    }
}

#[derive(Debug)]
pub struct TensorView<'a> {
    pub name: &'static str,
    pub role: ParamRole,
    /// (rows, cols); vectors and diagonals are (len, 1).
    pub shape: (usize, usize),
    pub values: &'a [f64],
}

#[derive(Debug)]
pub struct TensorViewMut<'a> {
    pub name: &'static str,
    pub role: ParamRole,
    pub shape: (usize, usize),
    pub values: &'a mut [f64],
}

pub trait Parameters {
    fn tensors(&self) -> Vec<TensorView<'_>>;
    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>>;

    fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.values.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for t in self.tensors() {
            out.extend_from_slice(t.values);
        }
        out
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.num_values();
        if flat.len() != expected {
            return Err(Error::shape("Parameters::set_flat", expected, flat.len()));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.values.len();
            t.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.values.iter_mut().for_each(|x| *x = value);
        }
    }

    fn norm(&self) -> f64 {
        norm_of_slices(self.tensors().iter().map(|t| t.values))
    }

    /// Map a flat index back to (tensor name, index within tensor).
    fn locate(&self, flat_index: usize) -> Option<(&'static str, usize)> {
        let mut offset = 0;
        for t in self.tensors() {
            let n = t.values.len();
            if flat_index < offset + n {
                return Some((t.name, flat_index - offset));
            }
            offset += n;
        }
        None
    }
}

/// Checks that two parameter trees have identical tensor layouts.
pub fn check_congruent(a: &impl Parameters, b: &impl Parameters, op: &'static str) -> Result<()> {
    let ta = a.tensors();
    let tb = b.tensors();
    if ta.len() != tb.len() {
        return Err(Error::Contract(format!(
            "{op}: {} tensors vs {}",
            ta.len(),
            tb.len()
        )));
    }
    for (x, y) in ta.iter().zip(&tb) {
        if x.name != y.name || x.shape != y.shape {
            return Err(Error::Contract(format!(
                "{op}: tensor {} {:?} does not match {} {:?}",
                x.name, x.shape, y.name, y.shape
            )));
        }
    }
    Ok(())
}

macro_rules! tensor_list {
    ($self:ident, $view:ident, $($field:ident $(.$sub:ident)? => $name:literal : $role:ident),* $(,)?) => {
        vec![$(
            $view {
                name: $name,
                role: ParamRole::$role,
                shape: $crate::params::shape_of(&$self.$field $(.$sub)?),
                values: tensor_list!(@values $view, $self.$field $(.$sub)?),
            }
        ),*]
    };
    (@values TensorView, $e:expr) => { $e.as_slice() };
    (@values TensorViewMut, $e:expr) => { $e.as_mut_slice() };
}
pub(crate) use tensor_list;

pub(crate) trait Shaped {
    fn shape(&self) -> (usize, usize);
}

impl Shaped for crate::numerics::Matrix {
    fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }
}

impl Shaped for crate::numerics::Vector {
    fn shape(&self) -> (usize, usize) {
        (self.len(), 1)
    }
}

pub(crate) fn shape_of(t: &impl Shaped) -> (usize, usize) {
    t.shape()
}
