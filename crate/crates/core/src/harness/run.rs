use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{OptimizerSpec, QuantMode, RunConfig};
use crate::error::{Error, Result};
use crate::optim::{adamw_update, l2_norm, pbsgdm_update, powerstep_update, signsgdm_update, OptimizerState};
use crate::power_transform::PowerExponent;
use crate::quantize::{adamw_update_q8, powerstep_update_q8, QuantizedAdam, QuantizedMomentum};
use crate::rng::{self, streams};

/// A run is flagged once its loss exceeds this multiple of the initial loss.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

pub const CSV_HEADER: &str = "step,loss,grad_norm_2,lr,update_norm,m_absmax,quant_max_error,diverged";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    /// `‖∇f(θ_step)‖₂` with the exact gradient.
    pub grad_norm_2: f64,
    /// Learning rate of the update that produced this row; 0 for step 0.
    pub lr: f64,
    pub update_norm: f64,
    /// Largest absolute entry of the momentum (first-moment) buffer.
    pub m_absmax: f64,
    /// Requantization error of the last step, quantized runs only.
    pub quant_max_error: Option<f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub rows: Vec<LogRow>,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Smallest logged `‖∇f‖₂`.
    pub min_grad_norm: f64,
    pub steps_completed: u64,
    pub diverged: bool,
}

fn real(out: &mut String, v: f64) {
    // 17 significant digits round-trip every f64
    let _ = write!(out, "{v:.16e}");
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.rows.len() + 1));
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},", r.step);
            for v in [r.loss, r.grad_norm_2, r.lr, r.update_norm, r.m_absmax] {
                real(&mut s, v);
                s.push(',');
            }
            if let Some(e) = r.quant_max_error {
                real(&mut s, e);
            }
            s.push(',');
            s.push_str(if r.diverged { "1" } else { "0" });
            s.push('\n');
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

enum Stepper {
    Fp(OptimizerState, OptimizerSpec),
    PowerQ8(QuantizedMomentum, crate::optim::PowerStepConfig),
    AdamQ8(QuantizedAdam, crate::optim::AdamWConfig),
}

impl Stepper {
    fn new(cfg: &RunConfig, dim: usize) -> Result<Self> {
        let zero = || PowerExponent::new(0.0).expect("in range");
        Ok(match (cfg.quant, &cfg.optimizer) {
            (QuantMode::Fp, spec @ OptimizerSpec::Adamw(_)) => Stepper::Fp(OptimizerState::adam(dim), spec.clone()),
            (QuantMode::Fp, spec) => Stepper::Fp(OptimizerState::momentum(dim), spec.clone()),
            (QuantMode::Q8, OptimizerSpec::Powerstep(c)) => {
                Stepper::PowerQ8(QuantizedMomentum::new(dim, cfg.block_size)?, *c)
            }
            (QuantMode::Q8, OptimizerSpec::Signsgdm(c)) => {
                Stepper::PowerQ8(QuantizedMomentum::new(dim, cfg.block_size)?, c.with_beta(zero()))
            }
            (QuantMode::Q8, OptimizerSpec::Adamw(c)) => Stepper::AdamQ8(QuantizedAdam::new(dim, cfg.block_size)?, *c),
            (QuantMode::Q8, OptimizerSpec::Pbsgdm(_)) => {
                return Err(Error::config("quant", "q8 is not available for pbsgdm"))
            }
        })
    }

    /// Returns the requantization error for quantized arms.
    fn step(&mut self, theta: &mut [f64], g: &[f64], lr: f64) -> Result<Option<f64>> {
        match self {
            Stepper::Fp(st, spec) => {
                match spec {
                    OptimizerSpec::Powerstep(c) => powerstep_update(theta, g, st, c, lr)?,
                    OptimizerSpec::Signsgdm(c) => signsgdm_update(theta, g, st, c, lr)?,
                    OptimizerSpec::Pbsgdm(c) => pbsgdm_update(theta, g, st, c, lr)?,
                    OptimizerSpec::Adamw(c) => adamw_update(theta, g, st, c, lr)?,
                }
                Ok(None)
            }
            Stepper::PowerQ8(st, c) => Ok(Some(powerstep_update_q8(theta, g, st, c, lr)?.max_quant_error)),
            Stepper::AdamQ8(st, c) => Ok(Some(adamw_update_q8(theta, g, st, c, lr)?.max_quant_error)),
        }
    }

    fn m_absmax(&self) -> f64 {
        match self {
            Stepper::Fp(st, _) => st.m.iter().fold(0.0f64, |a, v| a.max(v.abs())),
            Stepper::PowerQ8(st, _) => st.m.absmax(),
            Stepper::AdamQ8(st, _) => st.m.absmax(),
        }
    }
}

fn is_divergent(loss: f64, initial: f64) -> bool {
    !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial
}

/// Executes one configured run. Divergence ends the trajectory with a
/// flagged row instead of an error; errors are reserved for bad configs.
pub fn run(cfg: &RunConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let problem = cfg.problem.build(cfg.seed)?;
    let mut theta = problem.initial_point(&mut rng::stream(cfg.seed, streams::INIT));
    let mut grad_rng = rng::stream(cfg.seed, streams::GRADIENT);
    let mut stepper = Stepper::new(cfg, theta.len())?;

    let initial_loss = problem.loss(&theta);
    let g0 = l2_norm(&problem.grad(&theta));
    let mut rows = vec![LogRow {
        step: 0,
        loss: initial_loss,
        grad_norm_2: g0,
        lr: 0.0,
        update_norm: 0.0,
        m_absmax: 0.0,
        quant_max_error: cfg.quant.eq(&QuantMode::Q8).then_some(0.0),
        diverged: !initial_loss.is_finite(),
    }];
    let mut steps_completed = 0;
    let mut diverged = rows[0].diverged;
    let mut prev = theta.clone();

    let mut t = 0;
    while !diverged && t < cfg.total_steps {
        let lr = cfg.schedule.lr(t);
        let g = problem.sample_grad(&theta, &mut grad_rng);
        prev.copy_from_slice(&theta);
        let quant_err = match stepper.step(&mut theta, &g, lr) {
            Ok(e) => e,
            Err(Error::NonFiniteGradient { .. }) => {
                diverged = true;
                None
            }
            Err(e) => return Err(e),
        };
        t += 1;
        let loss = problem.loss(&theta);
        diverged |= is_divergent(loss, initial_loss);
        if !diverged {
            steps_completed = t;
        }
        if diverged || t % cfg.log_every == 0 || t == cfg.total_steps {
            let diff: Vec<f64> = theta.iter().zip(&prev).map(|(a, b)| a - b).collect();
            rows.push(LogRow {
                step: t,
                loss,
                grad_norm_2: l2_norm(&problem.grad(&theta)),
                lr,
                update_norm: l2_norm(&diff),
                m_absmax: stepper.m_absmax(),
                quant_max_error: quant_err,
                diverged,
            });
        }
    }
    let last = rows.last().expect("row 0 always exists");
    let final_loss = last.loss;
    let min_grad_norm = rows.iter().map(|r| r.grad_norm_2).fold(f64::INFINITY, f64::min);
    Ok(Trajectory {
        rows,
        initial_loss,
        final_loss,
        min_grad_norm,
        steps_completed,
        diverged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub problem: String,
    pub optimizer: String,
    pub quant: String,
    pub total_steps: u64,
    pub steps_completed: u64,
    pub diverged: bool,
    pub csv: String,
}

/// Writes `<stem>.csv` and `<stem>.manifest.json` under `dir`.
pub fn write_run(dir: &Path, stem: &str, cfg: &RunConfig, traj: &Trajectory) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{stem}.csv"));
    traj.write_csv(std::io::BufWriter::new(std::fs::File::create(&csv)?))?;
    let manifest = Manifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        problem: cfg.problem.build(cfg.seed)?.name().to_string(),
        optimizer: cfg.optimizer.name().to_string(),
        quant: cfg.quant.as_str().to_string(),
        total_steps: cfg.total_steps,
        steps_completed: traj.steps_completed,
        diverged: traj.diverged,
        csv: format!("{stem}.csv"),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join(format!("{stem}.manifest.json")), json + "\n")?;
    Ok(csv)
}
