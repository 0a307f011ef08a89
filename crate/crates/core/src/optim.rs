//! RMSProp, global-norm gradient clipping, log-uniform learning-rate
//! sampling and validation early stopping.

use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::params::{check_congruent, Parameters};

pub const DEFAULT_CLIP_THRESHOLD: f64 = 1.0;
pub const DEFAULT_RHO: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_PATIENCE: usize = 20;
pub const LR_LOG_LO: f64 = -12.0;
pub const LR_LOG_HI: f64 = -6.0;
/// Minimum decrease of the validation NLL that counts as an improvement.
pub const IMPROVEMENT_TOL: f64 = 1e-9;

/// Rescales `g` in place so its global norm is at most `threshold`.
/// Returns the factor applied (1.0 when untouched).
///
/// The factor is nudged down until the rescaled norm is `<= threshold`, so
/// clipping an already clipped tree is a bitwise no-op.
pub fn clip_global_norm_in_place<P: Parameters + ?Sized>(g: &mut P, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::Param(format!("clip threshold must be > 0, got {threshold}")));
    }
    let norm = g.norm();
    if !(norm > threshold) {
        return Ok(1.0);
    }
    let original = g.to_flat();
    let mut factor = threshold / norm;
    loop {
        let mut src = original.iter();
        for t in g.tensors_mut() {
            for (x, y) in t.values.iter_mut().zip(&mut src) {
                *x = y * factor;
            }
        }
        if g.norm() <= threshold || factor == 0.0 {
            return Ok(factor);
        }
        factor *= 1.0 - f64::EPSILON;
    }
}

/// Copying form of [`clip_global_norm_in_place`].
pub fn clip_global_norm<P: Parameters + Clone>(g: &P, threshold: f64) -> Result<P> {
    let mut out = g.clone();
    clip_global_norm_in_place(&mut out, threshold)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl RmsPropConfig {
    pub fn new(lr: f64) -> Self {
        RmsPropConfig {
            lr,
            rho: DEFAULT_RHO,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Param(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Param(format!("rho must lie in (0,1), got {}", self.rho)));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Param(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Running mean-square accumulator, shaped like the parameters it updates.
#[derive(Clone, Debug)]
pub struct RmsPropState<G> {
    pub accum: G,
    pub config: RmsPropConfig,
}

impl<G: Parameters> RmsPropState<G> {
    /// `zeros` must be a zero-filled tree congruent with the parameters.
    pub fn new(mut zeros: G, config: RmsPropConfig) -> Result<Self> {
        config.validate()?;
        zeros.fill(0.0);
        Ok(RmsPropState { accum: zeros, config })
    }

    /// `accum ← ρ·accum + (1−ρ)·g²; θ ← θ − lr·g/√(accum + ε)`.
    pub fn step(&mut self, params: &mut impl Parameters, g: &impl Parameters) -> Result<()> {
        check_congruent(&self.accum, g, "rmsprop_step (gradient)")?;
        check_congruent(&self.accum, params, "rmsprop_step (parameters)")?;
        let RmsPropConfig { lr, rho, epsilon } = self.config;
        let tensors = params.tensors_mut().into_iter().zip(self.accum.tensors_mut());
        for ((p, a), gt) in tensors.zip(g.tensors()) {
            for ((theta, acc), &gi) in p.values.iter_mut().zip(a.values.iter_mut()).zip(gt.values) {
                *acc = rho * *acc + (1.0 - rho) * gi * gi;
                *theta -= lr * gi / (*acc + epsilon).sqrt();
            }
        }
        Ok(())
    }
}

/// `e^u` with `u ~ Uniform(lo, hi)` (natural log).
pub fn sample_log_uniform_lr(rng: &mut RngStream, lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Param(format!("log-uniform range needs lo < hi, got [{lo}, {hi}]")));
    }
    Ok(rng.uniform_range(lo, hi).exp().clamp(lo.exp(), hi.exp()))
}

pub fn lr_candidates(rng: &mut RngStream, count: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    (0..count).map(|_| sample_log_uniform_lr(rng, lo, hi)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopState {
    pub best_valid: f64,
    /// `None` until the first finite validation score is seen.
    pub best_epoch: Option<usize>,
    pub patience: usize,
    pub epochs_since_best: usize,
}

impl EarlyStopState {
    pub fn new(patience: usize) -> Self {
        EarlyStopState {
            best_valid: f64::INFINITY,
            best_epoch: None,
            patience,
            epochs_since_best: 0,
        }
    }

    /// Starts from a known baseline (e.g. the untrained model's score).
    pub fn with_baseline(patience: usize, valid_nll: f64, epoch: usize) -> Self {
        let mut s = EarlyStopState::new(patience);
        s.update(valid_nll, epoch);
        s.epochs_since_best = 0;
        s
    }

    pub fn update(&mut self, valid_nll: f64, epoch: usize) -> StopDecision {
        if valid_nll < self.best_valid - IMPROVEMENT_TOL {
            self.best_valid = valid_nll;
            self.best_epoch = Some(epoch);
            self.epochs_since_best = 0;
        } else {
            self.epochs_since_best += 1;
        }
        if self.epochs_since_best > self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn is_best(&self, epoch: usize) -> bool {
        self.best_epoch == Some(epoch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{CellKind, GruVariant};
    use crate::heads::HeadKind;
    use crate::model::{Gradients, ModelShape, SequenceModel};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn random_grads(seed: u64, scale: f64) -> Gradients {
        let shape = ModelShape {
            kind: CellKind::ALL[(seed % 3) as usize],
            head: HeadKind::Gmm { components: 2 },
            hidden: 3,
            d_in: 2,
            d_out: 2,
            gru_variant: GruVariant::CandidateGated,
        };
        let mut g = SequenceModel::zeros(shape).zero_gradients();
        let mut rng = RngStream::new(seed);
        for t in g.tensors_mut() {
            t.values.iter_mut().for_each(|x| *x = scale * rng.standard_normal());
        }
        g
    }

    fn bits(p: &impl Parameters) -> Vec<u64> {
        p.to_flat().iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn clip_examples() {
        let mut g = random_grads(1, 1.0);
        let n = g.norm();
        g.scale(2.0 / n);
        let c = clip_global_norm(&g, 1.0).unwrap();
        assert_relative_eq!(c.norm(), 1.0, max_relative = 1e-14);
        for (a, b) in c.to_flat().iter().zip(g.to_flat()) {
            assert_relative_eq!(*a, 0.5 * b, max_relative = 1e-14);
        }

        g.scale(0.25);
        assert_eq!(bits(&clip_global_norm(&g, 1.0).unwrap()), bits(&g));

        let z = random_grads(2, 0.0);
        assert_eq!(bits(&clip_global_norm(&z, 1.0).unwrap()), bits(&z));
        assert!(clip_global_norm(&z, 0.0).is_err());
    }

    #[test]
    fn rmsprop_first_step() {
        let mut p = random_grads(0, 0.0);
        let mut g = random_grads(0, 0.0);
        g.fill(1.0);
        let mut opt = RmsPropState::new(p.clone(), RmsPropConfig::new(0.01)).unwrap();
        opt.step(&mut p, &g).unwrap();
        for x in p.to_flat() {
            assert_relative_eq!(x, -0.01 / (0.1f64 + 1e-8).sqrt(), max_relative = 1e-14);
            assert!((x + 0.0316228).abs() < 1e-7);
        }
        for a in opt.accum.to_flat() {
            assert_relative_eq!(a, 0.1, max_relative = 1e-15);
        }
    }

    #[test]
    fn rmsprop_zero_gradient_decays_accum() {
        let mut p = random_grads(4, 1.0);
        let before = p.clone();
        let mut opt = RmsPropState::new(p.clone(), RmsPropConfig::new(0.01)).unwrap();
        opt.accum.fill(2.0);
        opt.step(&mut p, &random_grads(4, 0.0)).unwrap();
        assert_eq!(bits(&p), bits(&before));
        for a in opt.accum.to_flat() {
            assert_relative_eq!(a, 1.8, max_relative = 1e-15);
        }
    }

    #[test]
    fn rmsprop_step_size_independent_of_gradient_scale() {
        for scale in [1e-3, 1.0, 1e3] {
            let mut p = random_grads(0, 0.0);
            let mut g = random_grads(0, 0.0);
            g.fill(scale);
            let mut cfg = RmsPropConfig::new(0.01);
            cfg.epsilon = 1e-300;
            let mut opt = RmsPropState::new(p.clone(), cfg).unwrap();
            opt.step(&mut p, &g).unwrap();
            assert_relative_eq!(p.to_flat()[0], -0.01 / 0.1f64.sqrt(), max_relative = 1e-12);
        }
    }

    #[test]
    fn rmsprop_rejects_incongruent_trees() {
        let mut p = random_grads(0, 1.0);
        let mut opt = RmsPropState::new(p.clone(), RmsPropConfig::new(0.01)).unwrap();
        let other = random_grads(1, 1.0);
        assert!(matches!(opt.step(&mut p, &other), Err(Error::Contract(_))));
        assert!(RmsPropState::new(p, RmsPropConfig::new(-1.0)).is_err());
    }

    #[test]
    fn log_uniform_samples() {
        let mut rng = RngStream::new(2024);
        let draws = lr_candidates(&mut rng, 100_000, LR_LOG_LO, LR_LOG_HI).unwrap();
        assert!(draws.iter().all(|&lr| ((-12f64).exp()..=(-6f64).exp()).contains(&lr)));
        let mean_log = draws.iter().map(|lr| lr.ln()).sum::<f64>() / draws.len() as f64;
        assert!((mean_log + 9.0).abs() < 0.02, "{mean_log}");

        let a = lr_candidates(&mut RngStream::new(5), 10, LR_LOG_LO, LR_LOG_HI).unwrap();
        let b = lr_candidates(&mut RngStream::new(5), 10, LR_LOG_LO, LR_LOG_HI).unwrap();
        assert_eq!(a, b);
        assert!(sample_log_uniform_lr(&mut rng, -6.0, -6.0).is_err());
    }

    #[test]
    fn early_stop_decreasing_never_stops() {
        let mut s = EarlyStopState::new(0);
        for epoch in 1..200 {
            assert_eq!(s.update(100.0 / epoch as f64, epoch), StopDecision::Continue);
            assert!(s.is_best(epoch));
        }
    }

    #[test]
    fn early_stop_constant_stops_after_patience_plus_one() {
        for patience in [0, 1, 5] {
            let mut s = EarlyStopState::new(patience);
            assert_eq!(s.update(3.0, 1), StopDecision::Continue);
            let mut stopped_at = None;
            for epoch in 2..50 {
                if s.update(3.0, epoch) == StopDecision::Stop {
                    stopped_at = Some(epoch);
                    break;
                }
            }
            assert_eq!(stopped_at, Some(patience + 2));
            assert_eq!(s.best_epoch, Some(1));
        }
    }

    #[test]
    fn early_stop_late_improvement_resets() {
        let mut s = EarlyStopState::new(2);
        s.update(5.0, 1);
        s.update(5.0, 2);
        s.update(5.0, 3);
        assert_eq!(s.update(4.0, 4), StopDecision::Continue);
        assert_eq!(s.epochs_since_best, 0);
        // a change within the tolerance is not an improvement
        s.update(4.0 - 1e-10, 5);
        assert_eq!(s.best_epoch, Some(4));
        assert_eq!(s.update(f64::NAN, 6), StopDecision::Continue);
        assert_eq!(s.update(3.0 + 1.0, 7), StopDecision::Stop);
    }

    proptest! {
        #[test]
        fn clip_invariants(seed in any::<u64>(), log_scale in -3.0f64..3.0, threshold in 0.1f64..5.0) {
            let g = random_grads(seed, 10f64.powf(log_scale));
            let c = clip_global_norm(&g, threshold).unwrap();
            prop_assert!(c.norm() <= threshold + 1e-12);
            let once = bits(&c);
            prop_assert_eq!(bits(&clip_global_norm(&c, threshold).unwrap()), once);
            // positive multiple of the input
            let ratio = c.norm() / g.norm();
            for (a, b) in c.to_flat().iter().zip(g.to_flat()) {
                prop_assert!((a - ratio * b).abs() <= 1e-12 * b.abs().max(1e-300));
            }
            if g.norm() <= threshold {
                prop_assert_eq!(bits(&c), bits(&g));
            }
        }

        #[test]
        fn rmsprop_accum_nonnegative(seed in 0u64..1 << 40, steps in 1usize..20) {
            // seeds congruent mod 3 share a cell kind
            let seed = seed * 3;
            let mut p = random_grads(seed, 1.0);
            let mut opt = RmsPropState::new(p.clone(), RmsPropConfig::new(1e-3)).unwrap();
            for k in 0..steps {
                let g = random_grads(seed + 3 * (k as u64 + 1), 5.0);
                opt.step(&mut p, &g).unwrap();
            }
            prop_assert!(opt.accum.to_flat().iter().all(|a| *a >= 0.0));
            prop_assert!(p.to_flat().iter().all(|x| x.is_finite()));
        }
    }
}
