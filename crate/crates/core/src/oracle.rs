//! Brute-force checks of the transform identities and optimizer bounds.
//!
//! Everything here recomputes quantities with scalar loops and compensated
//! summation, independently of the vectorized library paths, and reports
//! the worst violation instead of asserting.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::optim::{powerstep_update, OptimizerState, PowerStepConfig, Schedule};
use crate::power_transform::{holder_constant, signed_power_scalar, PowerExponent};
use crate::problems::Problem;
use crate::rng::{self, streams, Rng};

pub const GRID_DIMS: [usize; 5] = [1, 2, 8, 128, 1024];
pub const GRID_BETAS: [f64; 4] = [0.05, 0.1, 0.5, 1.0];
pub const DEFAULT_SAMPLES: usize = 1000;

/// Tolerance for identities that involve fractional powers.
pub const TOL_GENERAL: f64 = 1e-9;
/// Tolerance at `β = 1`, where every identity reduces to plain arithmetic.
pub const TOL_BETA_ONE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub id: String,
    pub samples: u64,
    pub max_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl LemmaReport {
    fn new(id: impl Into<String>, samples: u64, max_violation: f64, tolerance: f64) -> Self {
        Self {
            id: id.into(),
            samples,
            max_violation,
            tolerance,
            // NaN never passes
            pass: max_violation <= tolerance,
        }
    }
}

/// Kahan–Babuška (Neumaier) summation.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

fn pow_abs(a: f64, p: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a.abs().powf(p)
    }
}

fn norm_p(x: &[f64], p: f64) -> f64 {
    kahan_sum(x.iter().map(|&a| pow_abs(a, p))).powf(1.0 / p)
}

fn rel(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE)
}

fn excess(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).max(0.0) / rhs.abs().max(f64::MIN_POSITIVE)
}

/// Which (d, β) cells to sample and how many instances per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaGrid {
    pub samples: usize,
    pub dims: Vec<usize>,
    pub betas: Vec<f64>,
    pub seed: u64,
}

impl Default for LemmaGrid {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            dims: GRID_DIMS.to_vec(),
            betas: GRID_BETAS.to_vec(),
            seed: 0,
        }
    }
}

impl LemmaGrid {
    fn validate(&self) -> Result<Vec<PowerExponent>> {
        if self.samples == 0 || self.dims.is_empty() || self.betas.is_empty() {
            return Err(Error::InvalidParameter {
                name: "grid",
                reason: "samples, dims and betas must be non-empty".into(),
            });
        }
        if self.dims.contains(&0) {
            return Err(Error::InvalidParameter {
                name: "dims",
                reason: "dimensions must be positive".into(),
            });
        }
        self.betas.iter().map(|&b| PowerExponent::new(b)).collect()
    }
}

/// Random test vector. Instances cycle through a few shapes: plain Gaussian,
/// Gaussian with a random global scale over twelve decades, and sparse
/// vectors with exact zeros.
fn instance(r: &mut Rng, d: usize, shape: usize) -> Vec<f64> {
    let scale = match shape % 3 {
        1 => 10f64.powf(r.random_range(-6.0..6.0)),
        _ => 1.0,
    };
    (0..d)
        .map(|_| {
            if shape % 3 == 2 && r.random_bool(0.3) {
                0.0
            } else {
                let z: f64 = StandardNormal.sample(r);
                scale * z
            }
        })
        .collect()
}

fn tolerance_for(beta: PowerExponent) -> f64 {
    if beta.get() == 1.0 {
        TOL_BETA_ONE
    } else {
        TOL_GENERAL
    }
}

/// Runs `violation` over every instance of every dimension for each β and
/// returns one report per β. Instances are independent streams keyed by
/// their global index, so the result does not depend on thread count.
fn run_grid<F>(lemma: &str, grid: &LemmaGrid, violation: F) -> Result<Vec<LemmaReport>>
where
    F: Fn(&mut Rng, usize, PowerExponent, usize) -> f64 + Sync,
{
    let betas = grid.validate()?;
    let n = grid.samples;
    let per_beta = n * grid.dims.len();
    let mut out = Vec::with_capacity(betas.len());
    for (bi, &beta) in betas.iter().enumerate() {
        let viols: Vec<f64> = (0..per_beta)
            .into_par_iter()
            .map(|k| {
                let d = grid.dims[k / n];
                let id = streams::ORACLE + (bi * per_beta + k) as u64;
                let mut r = rng::stream(grid.seed, id);
                violation(&mut r, d, beta, k % n)
            })
            .collect();
        let worst = viols.iter().fold(0.0f64, |a, &v| if v.is_nan() || a.is_nan() { f64::NAN } else { a.max(v) });
        out.push(LemmaReport::new(
            format!("{lemma}[beta={}]", beta.get()),
            per_beta as u64,
            worst,
            tolerance_for(beta),
        ));
    }
    Ok(out)
}

/// `⟨m, Φ_β(m)⟩ = ‖m‖_{1+β}^{1+β}`, relative error.
pub fn check_lemma1(grid: &LemmaGrid) -> Result<Vec<LemmaReport>> {
    run_grid("lemma1", grid, |r, d, beta, k| {
        let m = instance(r, d, k);
        let lhs = kahan_sum(m.iter().map(|&a| a * signed_power_scalar(a, beta)));
        let rhs = kahan_sum(m.iter().map(|&a| pow_abs(a, 1.0 + beta.get())));
        if rhs == 0.0 {
            lhs.abs()
        } else {
            rel(lhs, rhs)
        }
    })
}

/// `‖Φ_β(m)‖₂² = ‖m‖_{2β}^{2β} ≤ d^{1−β}‖m‖₂^{2β}`. The violation is the
/// larger of the equality's relative error and the inequality's relative
/// excess.
pub fn check_lemma2(grid: &LemmaGrid) -> Result<Vec<LemmaReport>> {
    run_grid("lemma2", grid, |r, d, beta, k| {
        let b = beta.get();
        let m = instance(r, d, k);
        let phi_sq = kahan_sum(m.iter().map(|&a| {
            let p = signed_power_scalar(a, beta);
            p * p
        }));
        // β = 0 is outside the grid; |a|^0 is taken as 1 for nonzero a
        let mid = kahan_sum(m.iter().map(|&a| pow_abs(a, 2.0 * b)));
        let l2 = kahan_sum(m.iter().map(|&a| a * a)).sqrt();
        let bound = (d as f64).powf(1.0 - b) * l2.powf(2.0 * b);
        if mid == 0.0 {
            return phi_sq.abs();
        }
        rel(phi_sq, mid).max(excess(mid, bound))
    })
}

/// `‖Φ_β(x) − Φ_β(y)‖_{1+β} ≤ C_β‖x − y‖_{1+β}^β`, relative excess. Every
/// fourth instance pairs each coordinate with one of the opposite sign.
pub fn check_lemma3(grid: &LemmaGrid) -> Result<Vec<LemmaReport>> {
    run_grid("lemma3", grid, |r, d, beta, k| {
        let b = beta.get();
        let x = instance(r, d, k);
        let y: Vec<f64> = match k % 4 {
            // opposite signs, random magnitudes
            3 => x.iter().map(|&a| -a * r.random_range(0.0..2.0)).collect(),
            // exact mirror image
            2 => x.iter().map(|&a| -a).collect(),
            // nearby point
            1 => x.iter().map(|&a| a + 1e-3 * r.random_range(-1.0..1.0)).collect(),
            _ => instance(r, d, k + 1),
        };
        let p = 1.0 + b;
        let diff: Vec<f64> = x
            .iter()
            .zip(&y)
            .map(|(&a, &c)| signed_power_scalar(a, beta) - signed_power_scalar(c, beta))
            .collect();
        let lhs = norm_p(&diff, p);
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, c)| a - c).collect();
        let c = holder_constant(beta, d).expect("d ≥ 1");
        let rhs = c * norm_p(&xy, p).powf(b);
        if rhs == 0.0 {
            return lhs;
        }
        excess(lhs, rhs)
    })
}

/// Central differences with step `h·max(1, |θ_i|)`.
pub fn finite_diff_grad(problem: &dyn Problem, theta: &[f64], h: f64) -> Result<Vec<f64>> {
    if theta.len() != problem.dim() {
        return Err(Error::DimMismatch {
            expected: problem.dim(),
            found: theta.len(),
        });
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "h",
            reason: format!("must be positive, got {h}"),
        });
    }
    let mut x = theta.to_vec();
    let mut g = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let step = h * theta[i].abs().max(1.0);
        x[i] = theta[i] + step;
        let fp = problem.loss(&x);
        x[i] = theta[i] - step;
        let fm = problem.loss(&x);
        x[i] = theta[i];
        g.push((fp - fm) / (2.0 * step));
    }
    Ok(g)
}

pub const GRADIENT_AUDIT_TOL: f64 = 1e-5;
pub const GRADIENT_AUDIT_POINTS: usize = 10;

/// Compares the analytic gradient against [`finite_diff_grad`] at `points`
/// random points around the problem's start, using the error relative to
/// `max(‖∇f‖₂, 1)`.
pub fn gradient_audit(problem: &dyn Problem, points: usize, seed: u64) -> Result<LemmaReport> {
    let mut r = rng::stream(seed, streams::ORACLE - 1);
    let base = problem.initial_point(&mut r);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let theta: Vec<f64> = base
            .iter()
            .map(|&b| {
                let z: f64 = StandardNormal.sample(&mut r);
                b + 0.5 * z
            })
            .collect();
        let g = problem.grad(&theta);
        let fd = finite_diff_grad(problem, &theta, 1e-5)?;
        let err = kahan_sum(g.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b))).sqrt();
        let scale = kahan_sum(g.iter().map(|a| a * a)).sqrt().max(1.0);
        let v = err / scale;
        worst = if v.is_nan() { f64::NAN } else { worst.max(v) };
    }
    Ok(LemmaReport::new(
        format!("gradient[{}]", problem.name()),
        points as u64,
        worst,
        GRADIENT_AUDIT_TOL,
    ))
}

/// Settings for [`check_momentum_bound`].
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumProbe {
    pub beta: f64,
    pub lr: f64,
    pub steps: u64,
    pub seeds: usize,
    pub log_every: u64,
    pub seed: u64,
}

impl Default for MomentumProbe {
    fn default() -> Self {
        Self {
            beta: 0.1,
            lr: 1e-2,
            steps: 500,
            seeds: 64,
            log_every: 10,
            seed: 0,
        }
    }
}

/// Monte-Carlo check of `E‖m_t‖² ≤ 2(G² + σ²)/(1−γ)²` along PowerStep runs
/// without clipping. `G` is the largest `‖∇f‖₂` seen on any trajectory and
/// `σ²` the largest reported noise variance. At every logged step the mean
/// plus three standard errors must stay under the bound; the violation is
/// the relative excess.
pub fn check_momentum_bound(problem: &dyn Problem, gamma: f64, probe: &MomentumProbe) -> Result<LemmaReport> {
    if probe.seeds < 2 || probe.steps == 0 || probe.log_every == 0 {
        return Err(Error::InvalidParameter {
            name: "probe",
            reason: "need at least two seeds, one step and a positive log interval".into(),
        });
    }
    let cfg = PowerStepConfig::new(gamma, probe.beta, 0.0, None)?;
    let sched = Schedule::Constant { lr: probe.lr };
    sched.validate()?;
    let runs: Vec<Result<(Vec<f64>, f64, f64)>> = (0..probe.seeds)
        .into_par_iter()
        .map(|s| {
            let mut r = rng::stream(probe.seed, streams::ORACLE + s as u64);
            let mut theta = problem.initial_point(&mut r);
            let mut st = OptimizerState::momentum(theta.len());
            let mut g_max = 0.0f64;
            let mut var_max = 0.0f64;
            let mut logged = Vec::new();
            for t in 0..probe.steps {
                let exact = problem.grad(&theta);
                g_max = g_max.max(kahan_sum(exact.iter().map(|a| a * a)).sqrt());
                var_max = var_max.max(problem.noise_variance(&theta));
                let g = problem.sample_grad(&theta, &mut r);
                powerstep_update(&mut theta, &g, &mut st, &cfg, sched.lr(t))?;
                if (t + 1) % probe.log_every == 0 {
                    logged.push(kahan_sum(st.m.iter().map(|a| a * a)));
                }
            }
            Ok((logged, g_max, var_max))
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let g = runs.iter().fold(0.0f64, |a, r| a.max(r.1));
    let var = runs.iter().fold(0.0f64, |a, r| a.max(r.2));
    let bound = 2.0 * (g * g + var) / ((1.0 - gamma) * (1.0 - gamma));
    let n = runs.len() as f64;
    let mut worst = 0.0f64;
    for k in 0..runs[0].0.len() {
        let mean = kahan_sum(runs.iter().map(|r| r.0[k])) / n;
        let var_k = kahan_sum(runs.iter().map(|r| (r.0[k] - mean) * (r.0[k] - mean))) / (n - 1.0);
        let upper = mean + 3.0 * (var_k / n).sqrt();
        worst = if upper.is_nan() { f64::NAN } else { worst.max(excess(upper, bound)) };
    }
    Ok(LemmaReport::new(
        format!("momentum_bound[gamma={gamma}]"),
        (probe.seeds as u64) * probe.steps,
        worst,
        0.0,
    ))
}

pub const DESCENT_TOL: f64 = 1e-9;

/// Checks `f(θ_t) ≤ f(θ_{t−1}) − η⟨∇f(θ_{t−1}), Φ_β(m_t)⟩ + (Lη²/2)‖Φ_β(m_t)‖²`
/// at every step of a noiseless PowerStep run without weight decay or
/// clipping. `L` comes from [`Problem::smoothness`]. The violation is the
/// most negative slack, negated.
pub fn check_descent(problem: &dyn Problem, cfg: &PowerStepConfig, schedule: &Schedule, steps: u64) -> Result<LemmaReport> {
    let l = problem.smoothness().ok_or_else(|| Error::InvalidParameter {
        name: "problem",
        reason: format!("{} has no known smoothness constant", problem.name()),
    })?;
    let cfg = PowerStepConfig {
        weight_decay: 0.0,
        clip_norm: None,
        ..*cfg
    };
    schedule.validate()?;
    let mut r = rng::stream(0, streams::ORACLE);
    let mut theta = problem.initial_point(&mut r);
    if problem.noise_variance(&theta) != 0.0 {
        return Err(Error::InvalidParameter {
            name: "problem",
            reason: "descent check needs a noiseless problem".into(),
        });
    }
    let mut st = OptimizerState::momentum(theta.len());
    let mut f_prev = problem.loss(&theta);
    let mut worst = 0.0f64;
    for t in 0..steps {
        let g = problem.grad(&theta);
        let lr = schedule.lr(t);
        powerstep_update(&mut theta, &g, &mut st, &cfg, lr)?;
        let phi: Vec<f64> = st.m.iter().map(|&a| signed_power_scalar(a, cfg.beta)).collect();
        let ip = kahan_sum(g.iter().zip(&phi).map(|(a, b)| a * b));
        let sq = kahan_sum(phi.iter().map(|a| a * a));
        let f = problem.loss(&theta);
        let slack = f_prev - lr * ip + 0.5 * l * lr * lr * sq - f;
        worst = if slack.is_nan() { f64::NAN } else { worst.max((-slack).max(0.0)) };
        f_prev = f;
    }
    Ok(LemmaReport::new(
        format!("descent[{},beta={}]", problem.name(), cfg.beta.get()),
        steps,
        worst,
        DESCENT_TOL,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{quadratic, NoiseModel};

    fn small_grid(dims: &[usize], betas: &[f64]) -> LemmaGrid {
        LemmaGrid {
            samples: 50,
            dims: dims.to_vec(),
            betas: betas.to_vec(),
            seed: 3,
        }
    }

    #[test]
    fn kahan_recovers_cancelled_terms() {
        let v = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(kahan_sum(v), 2.0);
        assert_eq!(kahan_sum(std::iter::repeat_n(0.1, 10)), 1.0);
    }

    #[test]
    fn beta_one_identities_are_exact() {
        let g = small_grid(&[1, 8, 128], &[1.0]);
        for r in check_lemma1(&g).unwrap().into_iter().chain(check_lemma3(&g).unwrap()) {
            assert!(r.pass && r.max_violation <= TOL_BETA_ONE, "{r:?}");
            assert_eq!(r.tolerance, TOL_BETA_ONE);
        }
    }

    #[test]
    fn lemma2_is_equality_in_one_dimension() {
        let reports = check_lemma2(&small_grid(&[1], &[0.05, 0.5])).unwrap();
        assert!(reports.iter().all(|r| r.pass && r.max_violation < 1e-13), "{reports:?}");
    }

    #[test]
    fn reports_come_in_beta_order_and_are_reproducible() {
        let g = small_grid(&[2, 8], &[0.1, 0.5]);
        let a = check_lemma3(&g).unwrap();
        let b = check_lemma3(&g).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].id, "lemma3[beta=0.1]");
        assert_eq!(a[1].samples, 100);
    }

    #[test]
    fn report_fails_on_excess_and_nan() {
        assert!(!LemmaReport::new("x", 1, 2e-9, 1e-9).pass);
        assert!(!LemmaReport::new("x", 1, f64::NAN, 1e-9).pass);
        assert!(LemmaReport::new("x", 1, 1e-9, 1e-9).pass);
    }

    #[test]
    fn empty_grid_rejected() {
        let g = LemmaGrid {
            dims: vec![],
            ..LemmaGrid::default()
        };
        assert!(check_lemma1(&g).is_err());
    }

    #[test]
    fn finite_difference_on_quadratic() {
        let q = quadratic(4, 10.0).unwrap();
        let theta = [0.5, -1.0, 2.0, 0.0];
        let fd = finite_diff_grad(&q, &theta, 1e-5).unwrap();
        for (a, b) in fd.iter().zip(q.grad(&theta)) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(finite_diff_grad(&q, &theta[..2], 1e-5).is_err());
    }

    #[test]
    fn audit_catches_a_wrong_gradient() {
        struct Broken(crate::problems::Quadratic);
        impl Problem for Broken {
            fn name(&self) -> &str {
                "broken"
            }
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn loss(&self, t: &[f64]) -> f64 {
                self.0.loss(t)
            }
            fn grad(&self, t: &[f64]) -> Vec<f64> {
                self.0.grad(t).iter().map(|g| 1.01 * g).collect()
            }
            fn sample_grad(&self, t: &[f64], r: &mut Rng) -> Vec<f64> {
                self.0.sample_grad(t, r)
            }
            fn smoothness(&self) -> Option<f64> {
                None
            }
            fn optimum(&self) -> Option<(Vec<f64>, f64)> {
                None
            }
            fn noise_variance(&self, _t: &[f64]) -> f64 {
                0.0
            }
            fn initial_point(&self, r: &mut Rng) -> Vec<f64> {
                self.0.initial_point(r)
            }
        }
        let good = quadratic(8, 5.0).unwrap();
        assert!(gradient_audit(&good, 3, 1).unwrap().pass);
        assert!(!gradient_audit(&Broken(good), 3, 1).unwrap().pass);
    }

    #[test]
    fn momentum_bound_holds_on_noisy_quadratic() {
        let q = quadratic(16, 10.0).unwrap().with_noise(NoiseModel::gaussian(1.0).unwrap());
        let probe = MomentumProbe {
            steps: 100,
            seeds: 16,
            ..MomentumProbe::default()
        };
        let r = check_momentum_bound(&q, 0.9, &probe).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn descent_holds_and_rejects_noise() {
        let q = quadratic(32, 100.0).unwrap();
        let cfg = PowerStepConfig::new(0.9, 0.5, 0.0, None).unwrap();
        let s = Schedule::Constant { lr: 1e-3 };
        let r = check_descent(&q, &cfg, &s, 200).unwrap();
        assert!(r.pass, "{r:?}");
        let noisy = q.with_noise(NoiseModel::gaussian(0.1).unwrap());
        assert!(check_descent(&noisy, &cfg, &s, 10).is_err());
    }
}
