use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning-rate schedule, indexed by the 0-based update counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Constant {
        lr: f64,
    },
    /// Linear warmup from zero to `eta_max`, then cosine decay to `eta_min`
    /// at `total_steps`.
    WarmupCosine {
        eta_max: f64,
        eta_min: f64,
        warmup_steps: u64,
        total_steps: u64,
    },
    /// `η / √t` with `t = step + 1`.
    InverseSqrt {
        eta: f64,
    },
}

impl Schedule {
    pub fn warmup_cosine(eta_max: f64, eta_min: f64, warmup_steps: u64, total_steps: u64) -> Result<Self> {
        let s = Schedule::WarmupCosine {
            eta_max,
            eta_min,
            warmup_steps,
            total_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive and finite, got {v}"),
                })
            }
        };
        match *self {
            Schedule::Constant { lr } => {
                if !(lr.is_finite() && lr >= 0.0) {
                    return Err(Error::InvalidParameter {
                        name: "lr",
                        reason: format!("must be non-negative, got {lr}"),
                    });
                }
            }
            Schedule::InverseSqrt { eta } => positive("eta", eta)?,
            Schedule::WarmupCosine {
                eta_max,
                eta_min,
                warmup_steps,
                total_steps,
            } => {
                positive("eta_max", eta_max)?;
                positive("eta_min", eta_min)?;
                if eta_min > eta_max {
                    return Err(Error::InvalidParameter {
                        name: "eta_min",
                        reason: format!("{eta_min} exceeds eta_max {eta_max}"),
                    });
                }
                if total_steps == 0 {
                    return Err(Error::InvalidParameter {
                        name: "total_steps",
                        reason: "must be positive".into(),
                    });
                }
                if warmup_steps >= total_steps {
                    return Err(Error::InvalidParameter {
                        name: "warmup_steps",
                        reason: format!("{warmup_steps} must be below total_steps {total_steps}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Learning rate for update number `step` (0-based).
    pub fn lr(&self, step: u64) -> f64 {
        match *self {
            Schedule::Constant { lr } => lr,
            Schedule::InverseSqrt { eta } => eta / ((step + 1) as f64).sqrt(),
            Schedule::WarmupCosine {
                eta_max,
                eta_min,
                warmup_steps,
                total_steps,
            } => {
                if step < warmup_steps {
                    eta_max * step as f64 / warmup_steps as f64
                } else if step >= total_steps {
                    eta_min
                } else {
                    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
                    eta_min + 0.5 * (eta_max - eta_min) * (1.0 + (std::f64::consts::PI * progress).cos())
                }
            }
        }
    }
}

/// Free-function form of [`Schedule::lr`].
pub fn schedule_lr(s: &Schedule, step: u64) -> f64 {
    s.lr(step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_cosine_endpoints() {
        let s = Schedule::warmup_cosine(6e-4, 6e-5, 2000, 10_000).unwrap();
        assert_eq!(s.lr(0), 0.0);
        assert!((s.lr(1000) - 3e-4).abs() < 1e-18);
        assert_eq!(s.lr(2000), 6e-4);
        assert!((s.lr(10_000) - 6e-5).abs() < 1e-18);
        assert!((s.lr(6000) - 0.5 * (6e-4 + 6e-5)).abs() < 1e-16);
        assert_eq!(s.lr(50_000), 6e-5);
    }

    #[test]
    fn cosine_is_monotone_after_warmup() {
        let s = Schedule::warmup_cosine(1.0, 0.1, 10, 200).unwrap();
        let lrs: Vec<f64> = (10..=200).map(|t| s.lr(t)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn no_warmup_starts_at_eta_max() {
        let s = Schedule::warmup_cosine(0.5, 0.05, 0, 100).unwrap();
        assert_eq!(s.lr(0), 0.5);
    }

    #[test]
    fn inverse_sqrt() {
        let s = Schedule::InverseSqrt { eta: 2.0 };
        assert_eq!(s.lr(0), 2.0);
        assert_eq!(s.lr(3), 1.0);
        assert_eq!(schedule_lr(&s, 99), 0.2);
    }

    #[test]
    fn invalid_schedules() {
        assert!(Schedule::warmup_cosine(1.0, 2.0, 0, 10).is_err());
        assert!(Schedule::warmup_cosine(1.0, 0.1, 10, 10).is_err());
        assert!(Schedule::warmup_cosine(1.0, 0.1, 0, 0).is_err());
        assert!(Schedule::InverseSqrt { eta: 0.0 }.validate().is_err());
        assert!(Schedule::Constant { lr: -1.0 }.validate().is_err());
    }
}
