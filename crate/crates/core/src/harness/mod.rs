//! Experiment runner: configured runs, sweeps, the rate fit, the int8
//! demonstration and the verification suite.

mod config;
mod quantdemo;
mod rate;
mod run;
mod sweep;
mod verify;

pub use config::{OptimizerSpec, ProblemSpec, QuantMode, RunConfig};
pub use quantdemo::{
    adamw_q8_probe, arm_configs, quantdemo, ArmReport, MemoryReport, ProbeReport, QuantDemoConfig, QuantDemoReport,
};
pub use rate::{fit_rate, rate_experiment, RateConfig, RatePoint, RateReport};
pub use run::{run, write_run, LogRow, Manifest, Trajectory, CSV_HEADER, DIVERGENCE_FACTOR};
pub use sweep::{parse_values, summary_table, sweep, Axis, SweepArm};
pub use verify::{audit_problems, descent_checks, gradient_audits, momentum_checks, verify, VerifyReport};
