use rayon::prelude::*;
use serde::Serialize;

use super::config::ProblemSpec;
use crate::error::{Error, Result};
use crate::optim::{powerstep_update, OptimizerState, PowerStepConfig, Schedule};
use crate::problems::NoiseKind;
use crate::rng::{self, streams};

/// Least-squares slope of `ln y` against `ln t`.
pub fn fit_rate(horizons: &[f64], values: &[f64]) -> Result<f64> {
    if horizons.len() != values.len() {
        return Err(Error::DimMismatch {
            expected: horizons.len(),
            found: values.len(),
        });
    }
    if horizons.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "horizons",
            reason: "need at least two points".into(),
        });
    }
    if let Some(i) = horizons.iter().chain(values).position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter {
            name: "values",
            reason: format!("entry {i} is not positive and finite"),
        });
    }
    let x: Vec<f64> = horizons.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter {
            name: "horizons",
            reason: "all horizons are equal".into(),
        });
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateConfig {
    pub problem: ProblemSpec,
    pub optimizer: PowerStepConfig,
    /// Base step `η` of the `η/√t` schedule.
    pub eta: f64,
    pub horizons: Vec<u64>,
    pub seeds: usize,
    pub seed: u64,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSpec::Quadratic {
                dim: 64,
                condition_number: 10.0,
                sigma: 1.0,
                noise_kind: NoiseKind::GaussianIsotropic,
            },
            optimizer: PowerStepConfig::new(0.9, 0.1, 0.0, None).expect("valid"),
            eta: 0.2,
            horizons: vec![100, 1_000, 10_000, 100_000],
            seeds: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatePoint {
    pub horizon: u64,
    /// Seed average of `min_{t ≤ T} ‖∇f(θ_{t−1})‖²`.
    pub mean_min_grad_sq: f64,
    pub stderr: f64,
    /// Largest `‖∇f‖₂` seen on any run at this horizon.
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub config: RateConfig,
    pub points: Vec<RatePoint>,
    pub slope: f64,
}

/// `(min_t ‖∇f(θ_{t−1})‖², max_t ‖∇f(θ_{t−1})‖)` over one run of `horizon`
/// steps. The minimum is tracked online.
fn one_run(cfg: &RateConfig, horizon: u64, seed_index: usize) -> Result<(f64, f64)> {
    let seed = cfg.seed.wrapping_add(seed_index as u64);
    let problem = cfg.problem.build(seed)?;
    let sched = Schedule::InverseSqrt { eta: cfg.eta };
    let mut theta = problem.initial_point(&mut rng::stream(seed, streams::INIT));
    let mut r = rng::stream(seed, streams::GRADIENT);
    let mut st = OptimizerState::momentum(theta.len());
    let mut min_sq = f64::INFINITY;
    let mut max_norm = 0.0f64;
    for t in 0..horizon {
        let exact = problem.grad(&theta);
        let sq: f64 = exact.iter().map(|g| g * g).sum();
        min_sq = min_sq.min(sq);
        max_norm = max_norm.max(sq.sqrt());
        let g = problem.sample_grad(&theta, &mut r);
        powerstep_update(&mut theta, &g, &mut st, &cfg.optimizer, sched.lr(t))?;
    }
    Ok((min_sq, max_norm))
}

/// Runs every (horizon, seed) pair in parallel and fits the decay exponent
/// of the seed-averaged minimum squared gradient norm.
pub fn rate_experiment(cfg: &RateConfig) -> Result<RateReport> {
    if cfg.seeds == 0 || cfg.horizons.len() < 2 || cfg.horizons.contains(&0) {
        return Err(Error::config(
            "horizons",
            "need at least two positive horizons and one seed",
        ));
    }
    cfg.optimizer.validate()?;
    Schedule::InverseSqrt { eta: cfg.eta }.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.horizons.len())
        .flat_map(|h| (0..cfg.seeds).map(move |s| (h, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(h, s)| one_run(cfg, cfg.horizons[h], s))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n = cfg.seeds as f64;
    let points: Vec<RatePoint> = cfg
        .horizons
        .iter()
        .enumerate()
        .map(|(h, &horizon)| {
            let runs = &results[h * cfg.seeds..(h + 1) * cfg.seeds];
            let mean = runs.iter().map(|r| r.0).sum::<f64>() / n;
            let var = if cfg.seeds > 1 {
                runs.iter().map(|r| (r.0 - mean) * (r.0 - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            RatePoint {
                horizon,
                mean_min_grad_sq: mean,
                stderr: (var / n).sqrt(),
                max_grad_norm: runs.iter().fold(0.0f64, |a, r| a.max(r.1)),
            }
        })
        .collect();
    let ts: Vec<f64> = points.iter().map(|p| p.horizon as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_min_grad_sq).collect();
    let slope = fit_rate(&ts, &ys)?;
    Ok(RateReport {
        config: cfg.clone(),
        points,
        slope,
    })
}
