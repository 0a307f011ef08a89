//! Per-step predictive distributions and their negative log-likelihoods in nats.
//!
//! * [`BernoulliHead`]: independent sigmoid outputs for binary piano-roll frames.
//! * [`GmmHead`]: a K-component diagonal-Gaussian mixture over a block of real
//!   samples. Standard deviations are `exp(log_std)` with `log_std` clamped to
//!   `[-7, 7]`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{logsumexp_unchecked, sigmoid, Matrix, RngStream, Vector};
use crate::params::{tensor_list, ParamRole, Parameters, TensorView, TensorViewMut};

pub const DEFAULT_COMPONENTS: usize = 20;
pub const LOG_STD_MIN: f64 = -7.0;
pub const LOG_STD_MAX: f64 = 7.0;
/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` inside the logarithm only.
pub const P_CLAMP: f64 = 1e-12;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Bernoulli,
    Gmm { components: usize },
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Bernoulli => "bernoulli",
            HeadKind::Gmm { .. } => "gmm",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BernoulliHead {
    pub w_y: Matrix,
    pub b_y: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmHead {
    pub k: usize,
    pub d_out: usize,
    pub w_pi: Matrix,
    pub b_pi: Vector,
    /// Row `k * d_out + j` produces the mean of dimension `j` in component `k`.
    pub w_mu: Matrix,
    pub b_mu: Vector,
    pub w_s: Matrix,
    pub b_s: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub enum OutputHead {
    Bernoulli(BernoulliHead),
    Gmm(GmmHead),
}

/// Mixture emitted for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams {
    pub weights: Vector,
    pub means: Vec<Vector>,
    pub stds: Vec<Vector>,
}

/// Forward quantities kept for the backward pass.
#[derive(Clone, Debug)]
pub enum HeadCache {
    Bernoulli {
        p: Vector,
    },
    Gmm {
        log_weights: Vector,
        /// Flattened `k * d_out + j`.
        means: Vector,
        log_stds: Vector,
        /// Whether the log-std pre-activation hit the clamp (zero gradient there).
        clamped: Vec<bool>,
    },
}

fn uniform(rng: &mut RngStream, rows: usize, cols: usize, scale: f64) -> Matrix {
    crate::cells::uniform_matrix(rng, rows, cols, scale)
}

impl BernoulliHead {
    pub fn zeros(d_out: usize, n: usize) -> Self {
        BernoulliHead {
            w_y: Matrix::zeros(d_out, n),
            b_y: Vector::zeros(d_out),
        }
    }

    pub fn init(d_out: usize, n: usize, rng: &mut RngStream, scale: f64) -> Self {
        BernoulliHead {
            w_y: uniform(rng, d_out, n, scale),
            b_y: Vector::zeros(d_out),
        }
    }

    pub fn d_out(&self) -> usize {
        self.w_y.rows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_y.cols()
    }
}

impl GmmHead {
    pub fn zeros(k: usize, d_out: usize, n: usize) -> Self {
        GmmHead {
            k,
            d_out,
            w_pi: Matrix::zeros(k, n),
            b_pi: Vector::zeros(k),
            w_mu: Matrix::zeros(k * d_out, n),
            b_mu: Vector::zeros(k * d_out),
            w_s: Matrix::zeros(k * d_out, n),
            b_s: Vector::zeros(k * d_out),
        }
    }

    pub fn init(k: usize, d_out: usize, n: usize, rng: &mut RngStream, scale: f64) -> Self {
        let mut h = GmmHead::zeros(k, d_out, n);
        h.w_pi = uniform(rng, k, n, scale);
        h.w_mu = uniform(rng, k * d_out, n, scale);
        h.w_s = uniform(rng, k * d_out, n, scale);
        h
    }

    pub fn hidden_size(&self) -> usize {
        self.w_pi.cols()
    }
}

pub fn bernoulli_forward(head: &BernoulliHead, h: &Vector) -> Result<Vector> {
    if h.len() != head.hidden_size() {
        return Err(Error::shape("bernoulli_forward", head.hidden_size(), h.len()));
    }
    Ok(bernoulli_probs(head, h))
}

fn bernoulli_probs(head: &BernoulliHead, h: &[f64]) -> Vector {
    let mut a = head.b_y.clone();
    head.w_y.gemv_acc(h, &mut a);
    a.iter_mut().for_each(|v| *v = sigmoid(*v));
    a
}

fn check_binary(target: &[f64]) -> Result<()> {
    if let Some(bad) = target.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::Data(format!("Bernoulli target must be 0 or 1, got {bad}")));
    }
    Ok(())
}

/// `−Σ [t ln p + (1−t) ln(1−p)]` with `p` clamped away from {0, 1}.
pub fn bernoulli_nll(p: &Vector, target: &Vector) -> Result<f64> {
    if p.len() != target.len() {
        return Err(Error::shape("bernoulli_nll", p.len(), target.len()));
    }
    check_binary(target)?;
    Ok(bernoulli_nll_unchecked(p, target))
}

fn bernoulli_nll_unchecked(p: &[f64], target: &[f64]) -> f64 {
    let mut nll = 0.0;
    for (&pj, &tj) in p.iter().zip(target) {
        let pj = pj.clamp(P_CLAMP, 1.0 - P_CLAMP);
        nll -= if tj == 1.0 { pj.ln() } else { (1.0 - pj).ln() };
    }
    nll
}

fn gmm_cache(head: &GmmHead, h: &[f64]) -> HeadCache {
    let mut a_pi = head.b_pi.clone();
    head.w_pi.gemv_acc(h, &mut a_pi);
    let lse = logsumexp_unchecked(&a_pi);
    let log_weights = a_pi.map(|a| a - lse);

    let mut means = head.b_mu.clone();
    head.w_mu.gemv_acc(h, &mut means);

    let mut log_stds = head.b_s.clone();
    head.w_s.gemv_acc(h, &mut log_stds);
    let clamped = log_stds
        .iter()
        .map(|&s| !(LOG_STD_MIN..=LOG_STD_MAX).contains(&s))
        .collect();
    log_stds
        .iter_mut()
        .for_each(|s| *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX));

    HeadCache::Gmm {
        log_weights,
        means,
        log_stds,
        clamped,
    }
}

pub fn gmm_forward(head: &GmmHead, h: &Vector) -> Result<MixtureParams> {
    if h.len() != head.hidden_size() {
        return Err(Error::shape("gmm_forward", head.hidden_size(), h.len()));
    }
    let HeadCache::Gmm {
        log_weights,
        means,
        log_stds,
        ..
    } = gmm_cache(head, h)
    else {
        unreachable!()
    };
    let d = head.d_out;
    Ok(MixtureParams {
        weights: log_weights.map(f64::exp),
        means: means.chunks(d).map(|c| Vector::from(c.to_vec())).collect(),
        stds: log_stds
            .chunks(d)
            .map(|c| c.iter().map(|s| s.exp()).collect())
            .collect(),
    })
}

/// Per-component joint log-density `ln w_k + ln N(t; μ_k, diag σ_k²)`.
fn component_log_joint(log_weights: &[f64], means: &[f64], log_stds: &[f64], target: &[f64]) -> Vec<f64> {
    let d = target.len();
    log_weights
        .iter()
        .enumerate()
        .map(|(k, &lw)| {
            let mut acc = lw;
            for j in 0..d {
                let s = log_stds[k * d + j];
                let z = (target[j] - means[k * d + j]) * (-s).exp();
                acc -= HALF_LN_2PI + s + 0.5 * z * z;
            }
            acc
        })
        .collect()
}

/// Mixture NLL, computed through logsumexp.
pub fn gmm_nll(mix: &MixtureParams, target: &Vector) -> Result<f64> {
    let k = mix.weights.len();
    if k == 0 || mix.means.len() != k || mix.stds.len() != k {
        return Err(Error::Contract("mixture must have K >= 1 consistent components".into()));
    }
    let d = target.len();
    if mix.means.iter().chain(&mix.stds).any(|v| v.len() != d) {
        return Err(Error::shape("gmm_nll", "component vectors matching the target", d));
    }
    let log_weights: Vec<f64> = mix.weights.iter().map(|w| w.ln()).collect();
    let means: Vec<f64> = mix.means.iter().flat_map(|m| m.iter().copied()).collect();
    let log_stds: Vec<f64> = mix.stds.iter().flat_map(|s| s.iter().map(|x| x.ln())).collect();
    Ok(-logsumexp_unchecked(&component_log_joint(
        &log_weights,
        &means,
        &log_stds,
        target,
    )))
}

impl OutputHead {
    pub fn init(kind: HeadKind, d_out: usize, n: usize, rng: &mut RngStream, scale: f64) -> Result<Self> {
        if d_out == 0 || n == 0 {
            return Err(Error::Param(format!("head sizes must be >= 1 (d_out={d_out}, n={n})")));
        }
        Ok(match kind {
            HeadKind::Bernoulli => OutputHead::Bernoulli(BernoulliHead::init(d_out, n, rng, scale)),
            HeadKind::Gmm { components } => {
                if components == 0 {
                    return Err(Error::Param("mixture needs at least one component".into()));
                }
                OutputHead::Gmm(GmmHead::init(components, d_out, n, rng, scale))
            }
        })
    }

    pub fn zeros(kind: HeadKind, d_out: usize, n: usize) -> Self {
        match kind {
            HeadKind::Bernoulli => OutputHead::Bernoulli(BernoulliHead::zeros(d_out, n)),
            HeadKind::Gmm { components } => OutputHead::Gmm(GmmHead::zeros(components, d_out, n)),
        }
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            OutputHead::Bernoulli(_) => HeadKind::Bernoulli,
            OutputHead::Gmm(g) => HeadKind::Gmm { components: g.k },
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            OutputHead::Bernoulli(b) => b.d_out(),
            OutputHead::Gmm(g) => g.d_out,
        }
    }

    pub fn hidden_size(&self) -> usize {
        match self {
            OutputHead::Bernoulli(b) => b.hidden_size(),
            OutputHead::Gmm(g) => g.hidden_size(),
        }
    }

    pub fn zero_like(&self) -> Self {
        OutputHead::zeros(self.kind(), self.d_out(), self.hidden_size())
    }

    /// Forward from a hidden state the caller has already shape-checked.
    pub(crate) fn forward_unchecked(&self, h: &[f64]) -> HeadCache {
        match self {
            OutputHead::Bernoulli(b) => HeadCache::Bernoulli {
                p: bernoulli_probs(b, h),
            },
            OutputHead::Gmm(g) => gmm_cache(g, h),
        }
    }

    pub fn forward(&self, h: &Vector) -> Result<HeadCache> {
        if h.len() != self.hidden_size() {
            return Err(Error::shape("head forward", self.hidden_size(), h.len()));
        }
        Ok(self.forward_unchecked(h))
    }

    /// NLL of `target` under a cached forward pass.
    pub fn nll(&self, cache: &HeadCache, target: &[f64]) -> Result<f64> {
        if target.len() != self.d_out() {
            return Err(Error::shape("head nll (target)", self.d_out(), target.len()));
        }
        match cache {
            HeadCache::Bernoulli { p } => {
                check_binary(target)?;
                Ok(bernoulli_nll_unchecked(p, target))
            }
            HeadCache::Gmm {
                log_weights,
                means,
                log_stds,
                ..
            } => Ok(-logsumexp_unchecked(&component_log_joint(
                log_weights,
                means,
                log_stds,
                target,
            ))),
        }
    }

    /// Gradient of the per-step NLL, accumulated into `grads`; returns `grad_h`.
    #[allow(clippy::needless_range_loop)]
    pub(crate) fn backward_into(
        &self,
        h: &[f64],
        target: &[f64],
        cache: &HeadCache,
        grads: &mut OutputHead,
    ) -> Result<Vector> {
        let mut grad_h = Vector::zeros(self.hidden_size());
        match (self, cache, grads) {
            (OutputHead::Bernoulli(head), HeadCache::Bernoulli { p }, OutputHead::Bernoulli(g)) => {
                // canonical link: d NLL / d pre-activation = p − t
                let da: Vector = p.iter().zip(target).map(|(p, t)| p - t).collect();
                g.w_y.rank1_acc(&da, h);
                g.b_y.iter_mut().zip(da.iter()).for_each(|(b, d)| *b += d);
                head.w_y.gemv_t_acc(&da, &mut grad_h);
            }
            (
                OutputHead::Gmm(head),
                HeadCache::Gmm {
                    log_weights,
                    means,
                    log_stds,
                    clamped,
                },
                OutputHead::Gmm(g),
            ) => {
                let d = head.d_out;
                let joint = component_log_joint(log_weights, means, log_stds, target);
                let lse = logsumexp_unchecked(&joint);
                let resp: Vec<f64> = joint.iter().map(|j| (j - lse).exp()).collect();

                let da_pi: Vector = log_weights
                    .iter()
                    .zip(&resp)
                    .map(|(lw, r)| lw.exp() - r)
                    .collect();
                let mut da_mu = Vector::zeros(head.k * d);
                let mut da_s = Vector::zeros(head.k * d);
                for k in 0..head.k {
                    for j in 0..d {
                        let idx = k * d + j;
                        let inv_var = (-2.0 * log_stds[idx]).exp();
                        let diff = target[j] - means[idx];
                        da_mu[idx] = -resp[k] * diff * inv_var;
                        if !clamped[idx] {
                            da_s[idx] = resp[k] * (1.0 - diff * diff * inv_var);
                        }
                    }
                }
                for (da, w, gw, gb) in [
                    (&da_pi, &head.w_pi, &mut g.w_pi, &mut g.b_pi),
                    (&da_mu, &head.w_mu, &mut g.w_mu, &mut g.b_mu),
                    (&da_s, &head.w_s, &mut g.w_s, &mut g.b_s),
                ] {
                    gw.rank1_acc(da, h);
                    gb.iter_mut().zip(da.iter()).for_each(|(b, x)| *b += x);
                    w.gemv_t_acc(da, &mut grad_h);
                }
            }
            _ => {
                return Err(Error::Contract(
                    "head, cache and gradient container must be the same head type".into(),
                ))
            }
        }
        Ok(grad_h)
    }
}

/// Exact gradient of the per-step NLL with respect to the head parameters and `h`.
pub fn head_backward(
    head: &OutputHead,
    h: &Vector,
    target: &Vector,
    cache: &HeadCache,
) -> Result<(OutputHead, Vector)> {
    if h.len() != head.hidden_size() {
        return Err(Error::shape("head_backward (h)", head.hidden_size(), h.len()));
    }
    if target.len() != head.d_out() {
        return Err(Error::shape("head_backward (target)", head.d_out(), target.len()));
    }
    let mut grads = head.zero_like();
    let grad_h = head.backward_into(h, target, cache, &mut grads)?;
    Ok((grads, grad_h))
}

impl Parameters for OutputHead {
    fn tensors(&self) -> Vec<TensorView<'_>> {
        match self {
            OutputHead::Bernoulli(b) => tensor_list!(b, TensorView,
                w_y => "head.W_y": Weight,
                b_y => "head.b_y": Bias,
            ),
            OutputHead::Gmm(g) => tensor_list!(g, TensorView,
                w_pi => "head.W_pi": Weight,
                b_pi => "head.b_pi": Bias,
                w_mu => "head.W_mu": Weight,
                b_mu => "head.b_mu": Bias,
                w_s => "head.W_s": Weight,
                b_s => "head.b_s": Bias,
            ),
        }
    }

    fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        match self {
            OutputHead::Bernoulli(b) => tensor_list!(b, TensorViewMut,
                w_y => "head.W_y": Weight,
                b_y => "head.b_y": Bias,
            ),
            OutputHead::Gmm(g) => tensor_list!(g, TensorViewMut,
                w_pi => "head.W_pi": Weight,
                b_pi => "head.b_pi": Bias,
                w_mu => "head.W_mu": Weight,
                b_mu => "head.b_mu": Bias,
                w_s => "head.W_s": Weight,
                b_s => "head.b_s": Bias,
            ),
        }
    }
}

/// Entropy of the standard normal, `½ ln(2πe)`.
pub fn standard_normal_entropy() -> f64 {
    0.5 * (2.0 * PI * std::f64::consts::E).ln()
}
