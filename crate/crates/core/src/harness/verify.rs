use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::optim::{PowerStepConfig, Schedule};
use crate::oracle::{
    check_descent, check_lemma1, check_lemma2, check_lemma3, check_momentum_bound, gradient_audit, LemmaGrid,
    LemmaReport, MomentumProbe, GRADIENT_AUDIT_POINTS,
};
use crate::problems::{self, NoiseModel, Problem};

pub const MOMENTUM_GAMMAS: [f64; 3] = [0.85, 0.9, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub checks: Vec<LemmaReport>,
}

/// One instance of every problem family, for the gradient audit.
pub fn audit_problems(seed: u64) -> Result<Vec<Box<dyn Problem>>> {
    Ok(vec![
        Box::new(problems::quadratic(16, 100.0)?),
        Box::new(problems::mixed_magnitude(256, 128, 0.02)?),
        Box::new(problems::rosenbrock(8)?),
        Box::new(problems::logistic_synthetic(32, 256, seed)?),
        Box::new(problems::tiny_mlp([4, 8, 3], 64, seed)?),
    ])
}

pub fn gradient_audits(seed: u64) -> Result<Vec<LemmaReport>> {
    audit_problems(seed)?
        .par_iter()
        .map(|p| gradient_audit(p.as_ref(), GRADIENT_AUDIT_POINTS, seed))
        .collect()
}

pub fn momentum_checks(seed: u64) -> Result<Vec<LemmaReport>> {
    let q = problems::quadratic(64, 10.0)?.with_noise(NoiseModel::gaussian(1.0)?);
    let probe = MomentumProbe {
        seed,
        ..MomentumProbe::default()
    };
    MOMENTUM_GAMMAS
        .iter()
        .map(|&g| check_momentum_bound(&q, g, &probe))
        .collect()
}

/// Noiseless quadratics over a few conditionings, exponents and step sizes.
/// Steps are multiples of `1/L` that keep the heavy-ball case (`β = 1`)
/// stable, including one overshooting step.
pub fn descent_checks() -> Result<Vec<LemmaReport>> {
    let mut out = Vec::new();
    for (dim, cond) in [(1, 1.0), (8, 10.0), (64, 1000.0)] {
        let q = problems::quadratic(dim, cond)?;
        for beta in [0.05, 0.1, 0.5, 1.0] {
            for (gamma, c) in [(0.0, 1.5), (0.9, 1.0), (0.95, 0.1)] {
                let lr = c / cond;
                let cfg = PowerStepConfig::new(gamma, beta, 0.0, None)?;
                let mut r = check_descent(&q, &cfg, &Schedule::Constant { lr }, 500)?;
                r.id = format!("{}[dim={dim},cond={cond},gamma={gamma},lr={c}/L]", r.id);
                out.push(r);
            }
        }
    }
    Ok(out)
}

/// The full oracle suite behind the `verify` command.
pub fn verify(grid: &LemmaGrid) -> Result<VerifyReport> {
    let mut checks = check_lemma1(grid)?;
    checks.extend(check_lemma2(grid)?);
    checks.extend(check_lemma3(grid)?);
    checks.extend(momentum_checks(grid.seed)?);
    checks.extend(descent_checks()?);
    checks.extend(gradient_audits(grid.seed)?);
    Ok(VerifyReport {
        pass: checks.iter().all(|c| c.pass),
        checks,
    })
}
