use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{OptimizerSpec, ProblemSpec, QuantMode, RunConfig};
use super::run::{run, write_run, Trajectory, DIVERGENCE_FACTOR};
use crate::error::Result;
use crate::optim::{adamw_update, AdamWConfig, OptimizerState, PowerStepConfig, Schedule};
use crate::problems::{self, Problem};
use crate::quantize::{adamw_update_q8, ema_stall_probe, QuantizedAdam, QuantizedMomentum, StallReport};

/// Optimizer-state footprint implied by the buffer layouts: 4-byte floats
/// for the full-precision arms, one byte per code plus one 8-byte block
/// maximum per block for the int8 arms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryReport {
    pub dim: usize,
    pub block_size: usize,
    pub powerstep_fp32_bytes: usize,
    pub powerstep_q8_bytes: usize,
    pub adamw_fp32_bytes: usize,
    pub adamw_q8_bytes: usize,
    /// `adamw_fp32_bytes / powerstep_q8_bytes`.
    pub ratio: f64,
}

impl MemoryReport {
    pub fn new(dim: usize, block_size: usize) -> Result<Self> {
        let ps = QuantizedMomentum::new(dim, block_size)?.m.state_bytes();
        let ad = QuantizedAdam::new(dim, block_size)?;
        let adamw_fp32 = 2 * 4 * dim;
        Ok(Self {
            dim,
            block_size,
            powerstep_fp32_bytes: 4 * dim,
            powerstep_q8_bytes: ps,
            adamw_fp32_bytes: adamw_fp32,
            adamw_q8_bytes: ad.m.state_bytes() + ad.v.state_bytes(),
            ratio: adamw_fp32 as f64 / ps as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantDemoConfig {
    pub dim: usize,
    pub n_samples: usize,
    pub steps: u64,
    pub seed: u64,
    pub block_size: usize,
    pub powerstep: PowerStepConfig,
    pub adamw: AdamWConfig,
    pub schedule: Schedule,
    /// Relative band for PowerStep q8 against fp32 final loss.
    pub parity_tolerance: f64,
    pub probe_dim: usize,
    pub probe_small: f64,
    pub probe_steps: u64,
    pub probe_lr: f64,
    /// Update ratio that counts as an int8 AdamW blow-up.
    pub probe_ratio_threshold: f64,
}

impl Default for QuantDemoConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            n_samples: 1024,
            steps: 2000,
            seed: 0,
            block_size: 128,
            powerstep: PowerStepConfig::new(0.9, 0.1, 0.0, Some(1.0)).expect("valid"),
            adamw: AdamWConfig {
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            schedule: Schedule::warmup_cosine(1e-2, 1e-3, 100, 2000).expect("valid"),
            parity_tolerance: 0.1,
            probe_dim: 256,
            probe_small: 0.02,
            probe_steps: 50,
            probe_lr: 1e-3,
            probe_ratio_threshold: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmReport {
    pub arm: String,
    pub optimizer: String,
    pub quant: String,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub diverged: bool,
    /// Final loss above ten times the initial loss.
    pub blowup: bool,
    /// Informational only.
    pub elapsed_ms: u128,
}

/// Int8 AdamW against fp32 AdamW on the mixed-magnitude quadratic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub dim: usize,
    pub small: f64,
    pub steps: u64,
    /// Largest `|Δθ_i(q8)| / |Δθ_i(fp32)|` over coordinates and steps.
    pub max_update_ratio: f64,
    pub first_exceed_step: Option<u64>,
    pub diverged: bool,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantDemoReport {
    pub config: QuantDemoConfig,
    pub arms: Vec<ArmReport>,
    /// PowerStep q8 final loss over PowerStep fp32 final loss.
    pub powerstep_loss_ratio: f64,
    pub powerstep_parity: bool,
    pub adamw_fp32_clean: bool,
    pub adamw_q8_flagged_on_logistic: bool,
    pub probe: ProbeReport,
    pub memory: MemoryReport,
    pub stall: StallReport,
}

impl QuantDemoReport {
    pub fn pass(&self) -> bool {
        self.powerstep_parity && self.adamw_fp32_clean && self.probe.flagged && self.memory.ratio >= 7.0
    }
}

const ARMS: [(&str, bool, QuantMode); 4] = [
    ("adamw_fp32", true, QuantMode::Fp),
    ("adamw_q8", true, QuantMode::Q8),
    ("powerstep_fp32", false, QuantMode::Fp),
    ("powerstep_q8", false, QuantMode::Q8),
];

pub fn arm_configs(cfg: &QuantDemoConfig) -> Vec<(&'static str, RunConfig)> {
    ARMS.iter()
        .map(|&(name, adam, quant)| {
            let rc = RunConfig {
                total_steps: cfg.steps,
                seed: cfg.seed,
                log_every: 10,
                quant,
                block_size: cfg.block_size,
                problem: ProblemSpec::Logistic {
                    dim: cfg.dim,
                    n_samples: cfg.n_samples,
                    batch_size: None,
                    data_seed: None,
                },
                optimizer: if adam {
                    OptimizerSpec::Adamw(cfg.adamw)
                } else {
                    OptimizerSpec::Powerstep(cfg.powerstep)
                },
                schedule: cfg.schedule.clone(),
            };
            (name, rc)
        })
        .collect()
}

/// Steps fp32 and int8 AdamW side by side from the same start, each on its
/// own trajectory, and compares per-coordinate updates.
pub fn adamw_q8_probe(cfg: &QuantDemoConfig) -> Result<ProbeReport> {
    let p = problems::mixed_magnitude(cfg.probe_dim, cfg.block_size, cfg.probe_small)?;
    let mut r = crate::rng::stream(cfg.seed, crate::rng::streams::INIT);
    let start = p.initial_point(&mut r);
    let initial_loss = p.loss(&start);
    let (mut tf, mut tq) = (start.clone(), start);
    let mut sf = OptimizerState::adam(tf.len());
    let mut sq = QuantizedAdam::new(tq.len(), cfg.block_size)?;
    let mut max_ratio = 0.0f64;
    let mut first = None;
    let mut diverged = false;
    for t in 1..=cfg.probe_steps {
        let (pf, pq) = (tf.clone(), tq.clone());
        adamw_update(&mut tf, &p.grad(&pf), &mut sf, &cfg.adamw, cfg.probe_lr)?;
        let gq = p.grad(&pq);
        if gq.iter().any(|g| !g.is_finite()) {
            diverged = true;
            break;
        }
        adamw_update_q8(&mut tq, &gq, &mut sq, &cfg.adamw, cfg.probe_lr)?;
        for i in 0..tf.len() {
            let uf = (tf[i] - pf[i]).abs().max(f64::MIN_POSITIVE);
            let uq = (tq[i] - pq[i]).abs();
            max_ratio = max_ratio.max(uq / uf);
        }
        if first.is_none() && max_ratio > cfg.probe_ratio_threshold {
            first = Some(t);
        }
        let loss = p.loss(&tq);
        if !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial_loss {
            diverged = true;
            break;
        }
    }
    Ok(ProbeReport {
        dim: cfg.probe_dim,
        small: cfg.probe_small,
        steps: cfg.probe_steps,
        max_update_ratio: max_ratio,
        first_exceed_step: first,
        diverged,
        flagged: diverged || first.is_some(),
    })
}

fn arm_report(name: &str, rc: &RunConfig, t: &Trajectory, elapsed_ms: u128) -> ArmReport {
    ArmReport {
        arm: name.to_string(),
        optimizer: rc.optimizer.name().to_string(),
        quant: rc.quant.as_str().to_string(),
        initial_loss: t.initial_loss,
        final_loss: t.final_loss,
        diverged: t.diverged,
        blowup: !t.final_loss.is_finite() || t.final_loss > 10.0 * t.initial_loss,
        elapsed_ms,
    }
}

/// Runs the four paired arms, the int8 AdamW probe, the stall probe and the
/// memory arithmetic. With `out`, writes one CSV and manifest per arm and a
/// `report.json`.
pub fn quantdemo(cfg: &QuantDemoConfig, out: Option<&Path>) -> Result<QuantDemoReport> {
    let arms = arm_configs(cfg);
    let runs: Vec<Result<(Trajectory, u128)>> = arms
        .par_iter()
        .map(|(_, rc)| {
            let t0 = Instant::now();
            let t = run(rc)?;
            Ok((t, t0.elapsed().as_millis()))
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    if let Some(dir) = out {
        for ((name, rc), (t, _)) in arms.iter().zip(&runs) {
            write_run(dir, name, rc, t)?;
        }
    }
    let reports: Vec<ArmReport> = arms
        .iter()
        .zip(&runs)
        .map(|((name, rc), (t, ms))| arm_report(name, rc, t, *ms))
        .collect();
    let ps_ratio = reports[3].final_loss / reports[2].final_loss;
    let report = QuantDemoReport {
        config: cfg.clone(),
        powerstep_loss_ratio: ps_ratio,
        powerstep_parity: !reports[3].diverged && (ps_ratio - 1.0).abs() <= cfg.parity_tolerance,
        adamw_fp32_clean: !reports[0].diverged,
        adamw_q8_flagged_on_logistic: reports[1].diverged || reports[1].blowup,
        arms: reports,
        probe: adamw_q8_probe(cfg)?,
        memory: MemoryReport::new(cfg.dim, cfg.block_size)?,
        stall: ema_stall_probe(0.6e-3, 0.9, 100, 1e-3)?,
    };
    if let Some(dir) = out {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(dir.join("report.json"), json + "\n")?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memory_arithmetic() {
        let m = MemoryReport::new(1 << 20, 128).unwrap();
        assert_eq!(m.adamw_fp32_bytes, 8 << 20);
        assert_eq!(m.powerstep_q8_bytes, (1 << 20) + 8 * 8192);
        assert!(m.ratio > 7.5 && m.ratio < 7.6, "{}", m.ratio);
        assert_eq!(m.adamw_q8_bytes, 2 * m.powerstep_q8_bytes);
    }

    #[test]
    fn four_arms_in_fixed_order() {
        let arms = arm_configs(&QuantDemoConfig::default());
        let names: Vec<&str> = arms.iter().map(|a| a.0).collect();
        assert_eq!(names, ["adamw_fp32", "adamw_q8", "powerstep_fp32", "powerstep_q8"]);
        assert!(arms.iter().all(|a| a.1.seed == arms[0].1.seed));
    }

    #[test]
    fn probe_flags_int8_adamw() {
        let p = adamw_q8_probe(&QuantDemoConfig::default()).unwrap();
        assert!(p.flagged, "{p:?}");
        assert!(p.first_exceed_step.is_some_and(|s| s <= 50));
    }
}
