use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use powerstep::harness::{
    self, parse_values, quantdemo, rate_experiment, summary_table, sweep, Axis, ProblemSpec, QuantDemoConfig,
    RateConfig, RunConfig,
};
use powerstep::optim::PowerStepConfig;
use powerstep::oracle::LemmaGrid;
use powerstep::Result;

#[derive(Parser)]
#[command(name = "powerstep", version, about = "PowerStep optimizer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run and write its CSV and manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Vary one hyperparameter over a list of values.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the oracle suite; exits non-zero if any check fails.
    Verify {
        #[arg(long, default_value_t = powerstep::oracle::DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired fp32/int8 runs of AdamW and PowerStep.
    Quantdemo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit the decay exponent of the minimum gradient norm against the horizon.
    Rate {
        #[arg(long, default_value = "quadratic")]
        problem: String,
        #[arg(long, default_value = "100,1000,10000,100000")]
        horizons: String,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

fn write_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    match out {
        Some(p) => std::fs::write(p, json)?,
        None => print!("{json}"),
    }
    Ok(())
}

fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = RunConfig::from_file(&config)?;
            let traj = harness::run(&cfg)?;
            let csv = harness::write_run(&out, &stem(&config), &cfg, &traj)?;
            println!(
                "{}: {} steps, final loss {:.6e}, min grad norm {:.6e}{}",
                csv.display(),
                traj.steps_completed,
                traj.final_loss,
                traj.min_grad_norm,
                if traj.diverged { ", DIVERGED" } else { "" }
            );
            Ok(true)
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
        } => {
            let base = RunConfig::from_file(&config)?;
            let axis: Axis = axis.parse()?;
            let arms = sweep(&base, axis, &parse_values(&values)?)?;
            let name = stem(&config);
            let mut index = Vec::with_capacity(arms.len());
            for (i, arm) in arms.iter().enumerate() {
                let s = format!("{name}_{i:03}");
                harness::write_run(&out, &s, &arm.config, &arm.trajectory)?;
                index.push(serde_json::json!({
                    "value": arm.value,
                    "csv": format!("{s}.csv"),
                    "config_hash": arm.config.hash(),
                    "final_loss": arm.trajectory.final_loss,
                    "min_grad_norm": arm.trajectory.min_grad_norm,
                    "diverged": arm.trajectory.diverged,
                }));
            }
            write_json(&serde_json::json!({ "axis": axis, "arms": index }), Some(&out.join(format!("{name}_index.json"))))?;
            print!("{}", summary_table(axis, &arms));
            Ok(true)
        }
        Command::Verify { samples, seed, out } => {
            let grid = LemmaGrid {
                samples,
                seed,
                ..LemmaGrid::default()
            };
            let report = harness::verify(&grid)?;
            for c in &report.checks {
                eprintln!(
                    "{} {:<48} max violation {:.3e} (tol {:.0e})",
                    if c.pass { "pass" } else { "FAIL" },
                    c.id,
                    c.max_violation,
                    c.tolerance
                );
            }
            write_json(&report, out.as_deref())?;
            Ok(report.pass)
        }
        Command::Quantdemo { out, seed } => {
            let cfg = QuantDemoConfig {
                seed,
                ..QuantDemoConfig::default()
            };
            let r = quantdemo(&cfg, Some(&out))?;
            for a in &r.arms {
                println!(
                    "{:<16} final loss {:.6e}{}",
                    a.arm,
                    a.final_loss,
                    if a.diverged { "  DIVERGED" } else { "" }
                );
            }
            println!("powerstep q8/fp32 loss ratio {:.4}", r.powerstep_loss_ratio);
            println!(
                "adamw q8 probe: max update ratio {:.3e}, flagged {}",
                r.probe.max_update_ratio, r.probe.flagged
            );
            println!(
                "state bytes: powerstep q8 {} vs adamw fp32 {} ({:.2}x)",
                r.memory.powerstep_q8_bytes, r.memory.adamw_fp32_bytes, r.memory.ratio
            );
            println!("report written to {}", out.join("report.json").display());
            Ok(r.pass())
        }
        Command::Rate {
            problem,
            horizons,
            seeds,
            eta,
            gamma,
            beta,
            seed,
            out,
        } => {
            let defaults = RateConfig::default();
            let horizons = parse_values(&horizons)?
                .into_iter()
                .map(|h| {
                    if h >= 1.0 && h.fract() == 0.0 {
                        Ok(h as u64)
                    } else {
                        Err(powerstep::Error::Config {
                            field: "horizons".into(),
                            reason: format!("{h} is not a positive integer"),
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let cfg = RateConfig {
                problem: ProblemSpec::preset(&problem)?,
                optimizer: PowerStepConfig::new(gamma, beta, 0.0, None)?,
                eta: eta.unwrap_or(defaults.eta),
                horizons,
                seeds,
                seed,
            };
            let r = rate_experiment(&cfg)?;
            for p in &r.points {
                println!(
                    "T={:<8} mean min |grad|^2 {:.6e} ± {:.2e}  max |grad| {:.3e}",
                    p.horizon, p.mean_min_grad_sq, p.stderr, p.max_grad_norm
                );
            }
            println!("slope {:.4}", r.slope);
            if let Some(p) = out {
                write_json(&r, Some(&p))?;
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
