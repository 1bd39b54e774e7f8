//! Optimizer kernels operating on flat `f64` parameter vectors.
//!
//! PowerStep keeps a single heavy-ball buffer and steps along its signed
//! power transform:
//!
//! ```text
//! m ← γ·m + g
//! θ ← θ − η·(sign(m)·|m|^β + λ·θ)
//! ```
//!
//! There is no bias correction. With a steady gradient the buffer settles at
//! `g/(1−γ)`, so the effective step is `(1−γ)^{−β}` times that of a method
//! fed the raw gradient. That scale is left to the learning rate.
//!
//! Every update clips the raw gradient to the configured global norm before
//! it touches any buffer, and applies weight decay to the pre-update
//! parameters outside the momentum path.

mod schedule;

pub use schedule::{schedule_lr, Schedule};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::power_transform::{signed_power_scalar, PowerExponent};

/// Hyperparameters shared by PowerStep, SignSGD-with-momentum and pbSGDM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerStepConfig {
    pub gamma: f64,
    pub beta: PowerExponent,
    pub weight_decay: f64,
    /// Global-norm clipping threshold; `None` disables clipping. In config
    /// files `clip_norm = false` disables it.
    #[serde(with = "clip_serde")]
    pub clip_norm: Option<f64>,
}

impl Default for PowerStepConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            beta: PowerExponent::new(0.1).expect("valid default"),
            weight_decay: 0.1,
            clip_norm: Some(1.0),
        }
    }
}

impl PowerStepConfig {
    pub fn new(gamma: f64, beta: f64, weight_decay: f64, clip_norm: Option<f64>) -> Result<Self> {
        let cfg = Self {
            gamma,
            beta: PowerExponent::new(beta)?,
            weight_decay,
            clip_norm,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("must lie in [0, 1), got {}", self.gamma),
            });
        }
        check_decay(self.weight_decay)?;
        check_clip(self.clip_norm)
    }

    pub fn with_beta(mut self, beta: PowerExponent) -> Self {
        self.beta = beta;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    #[serde(with = "clip_serde")]
    pub clip_norm: Option<f64>,
    /// Divide the moments by `1 − β^t`. Turning it off gives the bare
    /// `m/(√v + ε)` step.
    pub bias_correction: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            epsilon: 1e-8,
            weight_decay: 0.1,
            clip_norm: Some(1.0),
            bias_correction: true,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must lie in [0, 1), got {b}"),
                });
            }
        }
        // epsilon = 0 is allowed only for hand-checked examples; the
        // configured default and anything loaded from files is positive.
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                reason: format!("must be non-negative, got {}", self.epsilon),
            });
        }
        check_decay(self.weight_decay)?;
        check_clip(self.clip_norm)
    }
}

/// `Option<f64>` as either a number or `false`, since TOML has no null.
mod clip_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Clip {
        Off(bool),
        On(f64),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            Some(c) => Clip::On(c),
            None => Clip::Off(false),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Clip>::deserialize(d)? {
            Some(Clip::On(c)) => Ok(Some(c)),
            Some(Clip::Off(false)) | None => Ok(None),
            Some(Clip::Off(true)) => Err(serde::de::Error::custom("clip_norm = true needs a threshold")),
        }
    }
}

fn check_decay(wd: f64) -> Result<()> {
    if !(wd >= 0.0 && wd.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "weight_decay",
            reason: format!("must be non-negative, got {wd}"),
        });
    }
    Ok(())
}

fn check_clip(clip: Option<f64>) -> Result<()> {
    match clip {
        Some(c) if !(c > 0.0 && c.is_finite()) => Err(Error::InvalidParameter {
            name: "clip_norm",
            reason: format!("must be positive, got {c}"),
        }),
        _ => Ok(()),
    }
}

/// Full-precision optimizer buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    /// Second moment, present only for AdamW.
    pub v: Option<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn momentum(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: None,
            step: 0,
        }
    }

    pub fn adam(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: Some(vec![0.0; dim]),
            step: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }
}

/// Sum with a fixed pairwise split so the result does not depend on how a
/// caller partitions the data.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if x.len() <= LEAF {
        return x.iter().sum();
    }
    let mid = x.len() / 2;
    pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
}

/// `‖x‖₂` using [`pairwise_sum`].
pub fn l2_norm(x: &[f64]) -> f64 {
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    pairwise_sum(&sq).sqrt()
}

/// Rescale `grad` to `max_norm` when its Euclidean norm exceeds it.
pub fn clip_global_norm(grad: &[f64], max_norm: f64) -> Vec<f64> {
    let mut g = grad.to_vec();
    clip_in_place(&mut g, max_norm);
    g
}

pub(crate) fn clip_in_place(g: &mut [f64], max_norm: f64) {
    let norm = l2_norm(g);
    if norm > max_norm {
        let s = max_norm / norm;
        for v in g.iter_mut() {
            *v *= s;
        }
    }
}

/// Validates shapes and finiteness, then returns the (optionally clipped)
/// gradient.
pub(crate) fn prepare_grad(theta: &[f64], grad: &[f64], buffer_dim: usize, step: u64, clip: Option<f64>) -> Result<Vec<f64>> {
    if theta.len() != grad.len() {
        return Err(Error::DimMismatch {
            expected: theta.len(),
            found: grad.len(),
        });
    }
    if buffer_dim != theta.len() {
        return Err(Error::DimMismatch {
            expected: theta.len(),
            found: buffer_dim,
        });
    }
    if let Some(index) = grad.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { step, index });
    }
    let mut g = grad.to_vec();
    if let Some(c) = clip {
        clip_in_place(&mut g, c);
    }
    Ok(g)
}

pub(crate) fn check_lr(lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "lr",
            reason: format!("must be non-negative, got {lr}"),
        });
    }
    Ok(())
}

/// One PowerStep update.
pub fn powerstep_update(theta: &mut [f64], grad: &[f64], state: &mut OptimizerState, cfg: &PowerStepConfig, lr: f64) -> Result<()> {
    check_lr(lr)?;
    let g = prepare_grad(theta, grad, state.m.len(), state.step, cfg.clip_norm)?;
    let (gamma, wd) = (cfg.gamma, cfg.weight_decay);
    for ((t, m), gi) in theta.iter_mut().zip(state.m.iter_mut()).zip(&g) {
        *m = gamma * *m + gi;
        let u = signed_power_scalar(*m, cfg.beta);
        *t -= lr * (u + wd * *t);
    }
    state.step += 1;
    Ok(())
}

/// SignSGD with momentum: PowerStep pinned to `β = 0`.
pub fn signsgdm_update(theta: &mut [f64], grad: &[f64], state: &mut OptimizerState, cfg: &PowerStepConfig, lr: f64) -> Result<()> {
    let cfg = cfg.with_beta(PowerExponent::new(0.0).expect("zero is in range"));
    powerstep_update(theta, grad, state, &cfg, lr)
}

/// pbSGDM: the transform is applied to the gradient before it enters the
/// buffer, and the step follows the buffer linearly.
pub fn pbsgdm_update(theta: &mut [f64], grad: &[f64], state: &mut OptimizerState, cfg: &PowerStepConfig, lr: f64) -> Result<()> {
    check_lr(lr)?;
    let g = prepare_grad(theta, grad, state.m.len(), state.step, cfg.clip_norm)?;
    let (gamma, wd) = (cfg.gamma, cfg.weight_decay);
    for ((t, m), gi) in theta.iter_mut().zip(state.m.iter_mut()).zip(&g) {
        *m = gamma * *m + signed_power_scalar(*gi, cfg.beta);
        *t -= lr * (*m + wd * *t);
    }
    state.step += 1;
    Ok(())
}

/// Bias-correction divisors `(1 − β₁^t, 1 − β₂^t)` for the update that
/// brings the counter to `t`.
pub(crate) fn adam_corrections(cfg: &AdamWConfig, t: u64) -> (f64, f64) {
    if cfg.bias_correction {
        let t = t.min(i32::MAX as u64) as i32;
        (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t))
    } else {
        (1.0, 1.0)
    }
}

/// One AdamW update with decoupled weight decay.
pub fn adamw_update(theta: &mut [f64], grad: &[f64], state: &mut OptimizerState, cfg: &AdamWConfig, lr: f64) -> Result<()> {
    check_lr(lr)?;
    let g = prepare_grad(theta, grad, state.m.len(), state.step, cfg.clip_norm)?;
    let v = state.v.as_mut().ok_or_else(|| Error::InvalidParameter {
        name: "state",
        reason: "AdamW requires a second-moment buffer".into(),
    })?;
    if v.len() != theta.len() {
        return Err(Error::DimMismatch {
            expected: theta.len(),
            found: v.len(),
        });
    }
    let (bc1, bc2) = adam_corrections(cfg, state.step + 1);
    let (b1, b2, eps, wd) = (cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay);
    for (((t, m), v), gi) in theta.iter_mut().zip(state.m.iter_mut()).zip(v.iter_mut()).zip(&g) {
        *m = b1 * *m + (1.0 - b1) * gi;
        *v = b2 * *v + (1.0 - b2) * gi * gi;
        let dir = adam_direction(*m / bc1, *v / bc2, eps);
        *t -= lr * (dir + wd * *t);
    }
    state.step += 1;
    Ok(())
}

/// `m̂/(√v̂ + ε)`, with `0/0` (zero gradient history, `ε = 0`) taken as 0.
#[inline]
pub(crate) fn adam_direction(m_hat: f64, v_hat: f64, eps: f64) -> f64 {
    let denom = v_hat.sqrt() + eps;
    if m_hat == 0.0 {
        0.0
    } else {
        m_hat / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ps(gamma: f64, beta: f64, wd: f64) -> PowerStepConfig {
        PowerStepConfig::new(gamma, beta, wd, None).unwrap()
    }

    #[test]
    fn plain_sgd_reduction() {
        let mut theta = vec![1.0];
        let mut st = OptimizerState::momentum(1);
        powerstep_update(&mut theta, &[2.0], &mut st, &ps(0.0, 1.0, 0.0), 0.1).unwrap();
        assert!((theta[0] - 0.8).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn sign_step() {
        let mut theta = vec![1.0];
        let mut st = OptimizerState::momentum(1);
        powerstep_update(&mut theta, &[-3.0], &mut st, &ps(0.9, 0.0, 0.0), 0.1).unwrap();
        assert_eq!(st.m, vec![-3.0]);
        assert!((theta[0] - 1.1).abs() < 1e-15);

        let mut theta2 = vec![1.0];
        let mut st2 = OptimizerState::momentum(1);
        signsgdm_update(&mut theta2, &[-3.0], &mut st2, &ps(0.9, 0.7, 0.0), 0.1).unwrap();
        assert_eq!(theta, theta2);
    }

    #[test]
    fn two_step_unroll() {
        // m1 = 1, m2 = 0.9 + 1 = 1.9; decrement at step 2 = lr·1.9^0.1
        let lr = 0.05;
        let mut theta = vec![0.0];
        let mut st = OptimizerState::momentum(1);
        let cfg = ps(0.9, 0.1, 0.0);
        powerstep_update(&mut theta, &[1.0], &mut st, &cfg, lr).unwrap();
        let before = theta[0];
        powerstep_update(&mut theta, &[1.0], &mut st, &cfg, lr).unwrap();
        assert!((st.m[0] - 1.9).abs() < 1e-15);
        let dec = before - theta[0];
        let want = lr * 1.066_290_058_478_526;
        assert!((dec - want).abs() < 1e-15, "{dec} vs {want}");
    }

    #[test]
    fn decoupled_decay_never_enters_momentum() {
        let mut theta = vec![2.0, -4.0];
        let mut st = OptimizerState::momentum(2);
        let cfg = ps(0.9, 0.1, 0.5);
        for _ in 0..10 {
            powerstep_update(&mut theta, &[0.0, 0.0], &mut st, &cfg, 0.1).unwrap();
        }
        assert_eq!(st.m, vec![0.0, 0.0]);
        let f = 0.95f64.powi(10);
        assert!((theta[0] - 2.0 * f).abs() < 1e-14);
        assert!((theta[1] + 4.0 * f).abs() < 1e-14);
    }

    #[test]
    fn errors_carry_step_index() {
        let mut theta = vec![0.0; 2];
        let mut st = OptimizerState::momentum(2);
        let cfg = ps(0.9, 0.1, 0.0);
        powerstep_update(&mut theta, &[1.0, 1.0], &mut st, &cfg, 0.1).unwrap();
        let err = powerstep_update(&mut theta, &[1.0, f64::INFINITY], &mut st, &cfg, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { step: 1, index: 1 }));
        assert!(matches!(
            powerstep_update(&mut theta, &[1.0], &mut st, &cfg, 0.1),
            Err(Error::DimMismatch { .. })
        ));
        assert!(powerstep_update(&mut theta, &[1.0, 1.0], &mut st, &cfg, -0.1).is_err());
        // failed updates leave the counter alone
        assert_eq!(st.step, 1);
    }

    #[test]
    fn config_validation() {
        assert!(PowerStepConfig::new(1.0, 0.1, 0.0, None).is_err());
        assert!(PowerStepConfig::new(0.9, 1.1, 0.0, None).is_err());
        assert!(PowerStepConfig::new(0.9, 0.1, -0.1, None).is_err());
        assert!(PowerStepConfig::new(0.9, 0.1, 0.0, Some(0.0)).is_err());
        let d = PowerStepConfig::default();
        assert_eq!((d.gamma, d.beta.get(), d.weight_decay, d.clip_norm), (0.9, 0.1, 0.1, Some(1.0)));
        let a = AdamWConfig::default();
        assert_eq!((a.beta1, a.beta2, a.epsilon), (0.9, 0.95, 1e-8));
        assert!(AdamWConfig { beta2: 1.0, ..a }.validate().is_err());
    }

    #[test]
    fn pbsgdm_reductions() {
        // β = 1: heavy-ball SGD
        let cfg = ps(0.9, 1.0, 0.0);
        let mut theta = vec![1.0, -2.0];
        let mut st = OptimizerState::momentum(2);
        let (mut hb, mut hm) = (vec![1.0, -2.0], vec![0.0, 0.0]);
        for k in 0..20 {
            let g = [0.3 * k as f64, -1.0];
            pbsgdm_update(&mut theta, &g, &mut st, &cfg, 0.01).unwrap();
            for i in 0..2 {
                hm[i] = 0.9 * hm[i] + g[i];
                hb[i] -= 0.01 * hm[i];
            }
        }
        assert_eq!(theta, hb);

        // γ = 0: Powerball, transform of the raw gradient
        let cfg = ps(0.0, 0.5, 0.0);
        let mut theta = vec![0.0];
        let mut st = OptimizerState::momentum(1);
        pbsgdm_update(&mut theta, &[4.0], &mut st, &cfg, 0.1).unwrap();
        assert!((theta[0] + 0.2).abs() < 1e-15);

        // two steps of constant unit gradient
        let cfg = ps(0.9, 0.1, 0.0);
        let mut theta = vec![0.0];
        let mut st = OptimizerState::momentum(1);
        pbsgdm_update(&mut theta, &[1.0], &mut st, &cfg, 0.1).unwrap();
        pbsgdm_update(&mut theta, &[1.0], &mut st, &cfg, 0.1).unwrap();
        assert!((st.m[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn adamw_examples() {
        // momentum-free, ε = 0: the first step is g/|g|
        let cfg = AdamWConfig {
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
            weight_decay: 0.0,
            clip_norm: None,
            bias_correction: true,
        };
        let mut theta = vec![1.0];
        let mut st = OptimizerState::adam(1);
        adamw_update(&mut theta, &[4.0], &mut st, &cfg, 0.25).unwrap();
        assert_eq!(theta, vec![0.75]);

        // zero gradients leave parameters untouched, even with ε = 0
        let mut theta = vec![0.3, -0.7];
        let mut st = OptimizerState::adam(2);
        for _ in 0..5 {
            adamw_update(&mut theta, &[0.0, 0.0], &mut st, &cfg, 0.1).unwrap();
        }
        assert_eq!(theta, vec![0.3, -0.7]);

        assert!(adamw_update(&mut theta, &[0.0, 0.0], &mut OptimizerState::momentum(2), &cfg, 0.1).is_err());
    }

    #[test]
    fn adamw_scalar_quadratic_three_steps() {
        // f(θ) = θ²/2 from θ = 1, default moments, λ = 0, lr = 0.1
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            clip_norm: None,
            ..AdamWConfig::default()
        };
        let mut theta = vec![1.0];
        let mut st = OptimizerState::adam(1);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = theta[0];
            adamw_update(&mut theta, &[g], &mut st, &cfg, 0.1).unwrap();
            // independent scalar unroll
            let gx = x;
            m = 0.9 * m + 0.1 * gx;
            v = 0.95 * v + 0.05 * gx * gx;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.95f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((theta[0] - x).abs() < 1e-14, "step {t}: {} vs {x}", theta[0]);
        }
        // first step is ≈ lr·sign(g)
        assert!((x - 0.7).abs() < 0.05);
    }

    #[test]
    fn adamw_without_bias_correction() {
        let cfg = AdamWConfig {
            beta1: 0.9,
            beta2: 0.95,
            epsilon: 0.0,
            weight_decay: 0.0,
            clip_norm: None,
            bias_correction: false,
        };
        let mut theta = vec![0.0];
        let mut st = OptimizerState::adam(1);
        adamw_update(&mut theta, &[2.0], &mut st, &cfg, 1.0).unwrap();
        // m = 0.2, v = 0.2 → 0.2/√0.2
        assert!((theta[0] + 0.2 / 0.2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn clipping_examples() {
        assert_eq!(clip_global_norm(&[0.3, 0.4], 1.0), vec![0.3, 0.4]);
        let c = clip_global_norm(&[3.0, 4.0], 1.0);
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn pairwise_sum_is_partition_independent() {
        let x: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 1e-3).collect();
        let whole = pairwise_sum(&x);
        let mut y = x.clone();
        let copy = pairwise_sum(&y);
        assert_eq!(whole.to_bits(), copy.to_bits());
        y.reverse();
        assert!((pairwise_sum(&y) - whole).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn clipped_norm_is_bounded(g in proptest::collection::vec(-100f64..100.0, 1..256), max in 0.01f64..10.0) {
            let c = clip_global_norm(&g, max);
            let n: f64 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(n <= max * (1.0 + 1e-12));
        }

        #[test]
        fn preconditioner_identity(m in proptest::collection::vec(prop_oneof![-50f64..-1e-6, 1e-6f64..50.0], 1..64), b in 0.01f64..1.0) {
            let beta = PowerExponent::new(b).unwrap();
            for &mi in &m {
                let phi = signed_power_scalar(mi, beta);
                let pre = mi.abs().powf(b - 1.0) * mi;
                prop_assert!((phi - pre).abs() <= 1e-12 * pre.abs());
            }
        }

        #[test]
        fn adaptivity_direction(a in 1e-4f64..10.0, ratio in 1.01f64..100.0, b in 0.0f64..0.99) {
            // step ratio PowerStep/heavy-ball = |m|^{β−1}, larger at the smaller coordinate
            let beta = PowerExponent::new(b).unwrap();
            let small = signed_power_scalar(a, beta) / a;
            let large = signed_power_scalar(a * ratio, beta) / (a * ratio);
            prop_assert!(small > large);
        }
    }
}
