//! Dense real64 linear algebra, elementwise nonlinearities and the seeded
//! random stream shared by the rest of the crate.
//!
//! Everything here is deliberately small: the largest model in the benchmark
//! protocol has under 200k recurrent parameters, so plain row-major loops are
//! enough.

use std::ops::{Deref, DerefMut};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A dense column vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector {
            data: vec![0.0; len],
        }
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Vector {
            data: vec![value; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Vector {
        Vector {
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Largest absolute entry; zero for an empty vector.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.data
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector { data }
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Vector {
            data: iter.into_iter().collect(),
        }
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `out += self · v` without shape checks; callers guarantee lengths.
    pub(crate) fn gemv_acc(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (row, o) in self.data.chunks_exact(self.cols.max(1)).zip(out.iter_mut()) {
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v) {
                acc += a * b;
            }
            *o += acc;
        }
    }

    /// `out += selfᵀ · g`.
    pub(crate) fn gemv_t_acc(&self, g: &[f64], out: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (row, &gi) in self.data.chunks_exact(self.cols.max(1)).zip(g) {
            if gi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * gi;
            }
        }
    }

    /// `self += g · vᵀ` (outer-product accumulation used by every weight gradient).
    pub(crate) fn rank1_acc(&mut self, g: &[f64], v: &[f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        let cols = self.cols.max(1);
        for (row, &gi) in self.data.chunks_exact_mut(cols).zip(g) {
            if gi == 0.0 {
                continue;
            }
            for (a, b) in row.iter_mut().zip(v) {
                *a += gi * b;
            }
        }
    }
}

/// Square matrix with identically zero off-diagonal entries, stored by its diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagMatrix {
    pub diag: Vector,
}

impl DiagMatrix {
    pub fn zeros(n: usize) -> Self {
        DiagMatrix {
            diag: Vector::zeros(n),
        }
    }

    pub fn from_diag(diag: Vector) -> Self {
        DiagMatrix { diag }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Dense copy, mainly for tests.
    pub fn to_dense(&self) -> Matrix {
        let n = self.dim();
        let mut m = Matrix::zeros(n, n);
        for (i, &d) in self.diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }
}

/// Anything that owns a flat block of real64 values.
pub trait Tensor {
    fn values(&self) -> &[f64];
}

impl Tensor for Vector {
    fn values(&self) -> &[f64] {
        &self.data
    }
}

impl Tensor for Matrix {
    fn values(&self) -> &[f64] {
        &self.data
    }
}

impl Tensor for DiagMatrix {
    fn values(&self) -> &[f64] {
        &self.diag.data
    }
}

pub fn mat_vec(m: &Matrix, v: &Vector) -> Result<Vector> {
    if m.cols != v.len() {
        return Err(Error::shape("mat_vec", m.cols, v.len()));
    }
    let mut out = Vector::zeros(m.rows);
    m.gemv_acc(v, &mut out);
    Ok(out)
}

pub fn hadamard(a: &Vector, b: &Vector) -> Result<Vector> {
    if a.len() != b.len() {
        return Err(Error::shape("hadamard", a.len(), b.len()));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y).collect())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_vec(v: &Vector) -> Vector {
    v.map(sigmoid)
}

pub fn tanh_vec(v: &Vector) -> Vector {
    v.map(f64::tanh)
}

/// Euclidean norm of the concatenation of all tensors.
pub fn global_norm(tensors: &[&dyn Tensor]) -> f64 {
    norm_of_slices(tensors.iter().map(|t| t.values()))
}

pub(crate) fn norm_of_slices<'a>(slices: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    let mut sum = 0.0;
    for s in slices {
        for x in s {
            sum += x * x;
        }
    }
    sum.sqrt()
}

/// `ln Σ exp(v_i)` with max subtraction.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Param("logsumexp of an empty vector".into()));
    }
    Ok(logsumexp_unchecked(v))
}

pub(crate) fn logsumexp_unchecked(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent child seed from a parent seed and a stream label.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(label.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Seeded, platform-independent random stream.
///
/// Single owner. Parallel work forks child streams with [`RngStream::fork`],
/// which depends only on the seed, never on how many values were drawn.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fork(&self, label: u64) -> RngStream {
        RngStream::new(derive_seed(self.seed, label))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }
}

fn check_std(std: f64) -> Result<()> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::Param(format!(
            "standard deviation must be finite and >= 0, got {std}"
        )));
    }
    Ok(())
}

pub fn gaussian_vector(rng: &mut RngStream, len: usize, mean: f64, std: f64) -> Result<Vector> {
    check_std(std)?;
    if std == 0.0 {
        return Ok(Vector::filled(len, mean));
    }
    Ok((0..len).map(|_| mean + std * rng.standard_normal()).collect())
}

pub fn gaussian_matrix(
    rng: &mut RngStream,
    rows: usize,
    cols: usize,
    mean: f64,
    std: f64,
) -> Result<Matrix> {
    let v = gaussian_vector(rng, rows * cols, mean, std)?;
    Matrix::from_vec(rows, cols, v.into_vec())
}
