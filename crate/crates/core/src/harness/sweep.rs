use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{OptimizerSpec, RunConfig};
use super::run::{run, Trajectory};
use crate::error::{Error, Result};
use crate::optim::Schedule;
use crate::power_transform::PowerExponent;

/// Hyperparameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// PowerStep-family exponent.
    Beta,
    /// PowerStep-family momentum, or AdamW `beta1`.
    Gamma,
    WeightDecay,
    /// Peak learning rate of the schedule. For warmup-cosine the floor
    /// follows at a tenth of the peak.
    EtaMax,
    ClipNorm,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "beta" => Axis::Beta,
            "gamma" => Axis::Gamma,
            "weight_decay" => Axis::WeightDecay,
            "eta_max" => Axis::EtaMax,
            "clip_norm" => Axis::ClipNorm,
            other => {
                return Err(Error::config(
                    "axis",
                    format!("unknown axis `{other}` (expected beta, gamma, weight_decay, eta_max or clip_norm)"),
                ))
            }
        })
    }
}

impl Axis {
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = base.clone();
        match (self, &mut cfg.optimizer) {
            (Axis::Beta, OptimizerSpec::Powerstep(c) | OptimizerSpec::Pbsgdm(c)) => {
                c.beta = PowerExponent::new(value).map_err(|e| Error::config("optimizer.beta", e.to_string()))?
            }
            (Axis::Beta, opt) => {
                return Err(Error::config(
                    "axis",
                    format!("beta cannot be swept for {}", opt.name()),
                ))
            }
            (Axis::Gamma, OptimizerSpec::Adamw(c)) => c.beta1 = value,
            (Axis::Gamma, OptimizerSpec::Powerstep(c) | OptimizerSpec::Signsgdm(c) | OptimizerSpec::Pbsgdm(c)) => {
                c.gamma = value
            }
            (Axis::WeightDecay, OptimizerSpec::Adamw(c)) => c.weight_decay = value,
            (
                Axis::WeightDecay,
                OptimizerSpec::Powerstep(c) | OptimizerSpec::Signsgdm(c) | OptimizerSpec::Pbsgdm(c),
            ) => c.weight_decay = value,
            (Axis::ClipNorm, OptimizerSpec::Adamw(c)) => c.clip_norm = Some(value),
            (Axis::ClipNorm, OptimizerSpec::Powerstep(c) | OptimizerSpec::Signsgdm(c) | OptimizerSpec::Pbsgdm(c)) => {
                c.clip_norm = Some(value)
            }
            (Axis::EtaMax, _) => {
                cfg.schedule = match cfg.schedule {
                    Schedule::Constant { .. } => Schedule::Constant { lr: value },
                    Schedule::InverseSqrt { .. } => Schedule::InverseSqrt { eta: value },
                    Schedule::WarmupCosine {
                        warmup_steps,
                        total_steps,
                        ..
                    } => Schedule::WarmupCosine {
                        eta_max: value,
                        eta_min: 0.1 * value,
                        warmup_steps,
                        total_steps,
                    },
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepArm {
    pub value: f64,
    pub config: RunConfig,
    pub trajectory: Trajectory,
}

/// Comma-separated reals, as given on the command line.
pub fn parse_values(csv: &str) -> Result<Vec<f64>> {
    csv.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| Error::config("values", format!("`{s}`: {e}")))
        })
        .collect()
}

/// One run per value with the base seed. Every derived config is validated
/// before any run starts; a divergent arm is recorded in its trajectory and
/// does not stop the others.
pub fn sweep(base: &RunConfig, axis: Axis, values: &[f64]) -> Result<Vec<SweepArm>> {
    if values.is_empty() {
        return Err(Error::config("values", "at least one value is required"));
    }
    let configs = values
        .iter()
        .map(|&v| axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<Result<Trajectory>> = configs.par_iter().map(run).collect();
    values
        .iter()
        .zip(configs)
        .zip(runs)
        .map(|((&value, config), t)| {
            Ok(SweepArm {
                value,
                config,
                trajectory: t?,
            })
        })
        .collect()
}

/// Plain-text table: value, final loss, min gradient norm, divergence.
pub fn summary_table(axis: Axis, arms: &[SweepArm]) -> String {
    let name = serde_json::to_value(axis).expect("axis serializes");
    let mut s = format!(
        "{:>12}  {:>24}  {:>24}  {}\n",
        name.as_str().unwrap_or("value"),
        "final_loss",
        "min_grad_norm",
        "diverged"
    );
    for a in arms {
        let _ = writeln!(
            s,
            "{:>12}  {:>24.16e}  {:>24.16e}  {}",
            a.value, a.trajectory.final_loss, a.trajectory.min_grad_norm, a.trajectory.diverged
        );
    }
    s
}
