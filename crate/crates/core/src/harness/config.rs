use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optim::{AdamWConfig, PowerStepConfig, Schedule};
use crate::problems::{self, NoiseKind, NoiseModel, Problem};
use crate::quantize::DEFAULT_BLOCK_SIZE;

/// A single run: problem, optimizer, schedule and bookkeeping.
///
/// ```toml
/// total_steps = 2000
/// seed = 7
/// log_every = 10
/// quant = "fp"
///
/// [problem]
/// kind = "quadratic"
/// dim = 64
/// condition_number = 1000.0
///
/// [optimizer]
/// name = "powerstep"
/// gamma = 0.9
/// beta = 0.1
///
/// [schedule]
/// kind = "constant"
/// lr = 0.001
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub total_steps: u64,
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default)]
    pub quant: QuantMode,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    pub problem: ProblemSpec,
    pub optimizer: OptimizerSpec,
    pub schedule: Schedule,
}

fn default_log_every() -> u64 {
    1
}

fn default_block_size() -> usize {
    DEFAULT_BLOCK_SIZE
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantMode {
    #[default]
    Fp,
    Q8,
}

impl QuantMode {
    pub fn as_str(self) -> &'static str {
        match self {
            QuantMode::Fp => "fp",
            QuantMode::Q8 => "q8",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Quadratic {
        dim: usize,
        condition_number: f64,
        #[serde(default)]
        sigma: f64,
        #[serde(default)]
        noise_kind: NoiseKind,
    },
    MixedMagnitude {
        dim: usize,
        block_size: usize,
        small: f64,
        #[serde(default)]
        sigma: f64,
        #[serde(default)]
        noise_kind: NoiseKind,
    },
    Rosenbrock {
        dim: usize,
        #[serde(default)]
        sigma: f64,
        #[serde(default)]
        noise_kind: NoiseKind,
    },
    Logistic {
        dim: usize,
        n_samples: usize,
        batch_size: Option<usize>,
        /// Seed for the synthetic data set; the run seed when absent.
        data_seed: Option<u64>,
    },
    TinyMlp {
        widths: [usize; 3],
        n_samples: usize,
        data_seed: Option<u64>,
    },
}

impl ProblemSpec {
    /// Named presets used by the `rate` command.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "quadratic" => ProblemSpec::Quadratic {
                dim: 64,
                condition_number: 10.0,
                sigma: 1.0,
                noise_kind: NoiseKind::GaussianIsotropic,
            },
            "rosenbrock" => ProblemSpec::Rosenbrock {
                dim: 8,
                sigma: 1.0,
                noise_kind: NoiseKind::GaussianIsotropic,
            },
            "logistic" => ProblemSpec::Logistic {
                dim: 32,
                n_samples: 512,
                batch_size: None,
                data_seed: None,
            },
            "tiny_mlp" => ProblemSpec::TinyMlp {
                widths: [4, 16, 2],
                n_samples: 128,
                data_seed: None,
            },
            other => {
                return Err(Error::config(
                    "problem",
                    format!("unknown preset `{other}` (expected quadratic, rosenbrock, logistic or tiny_mlp)"),
                ))
            }
        })
    }

    pub fn build(&self, run_seed: u64) -> Result<Box<dyn Problem>> {
        let noise = |sigma: f64, kind: NoiseKind| {
            let n = NoiseModel { sigma, kind };
            n.validate().map(|_| n)
        };
        let p: Box<dyn Problem> = match *self {
            ProblemSpec::Quadratic {
                dim,
                condition_number,
                sigma,
                noise_kind,
            } => Box::new(problems::quadratic(dim, condition_number)?.with_noise(noise(sigma, noise_kind)?)),
            ProblemSpec::MixedMagnitude {
                dim,
                block_size,
                small,
                sigma,
                noise_kind,
            } => Box::new(problems::mixed_magnitude(dim, block_size, small)?.with_noise(noise(sigma, noise_kind)?)),
            ProblemSpec::Rosenbrock { dim, sigma, noise_kind } => {
                Box::new(problems::rosenbrock(dim)?.with_noise(noise(sigma, noise_kind)?))
            }
            ProblemSpec::Logistic {
                dim,
                n_samples,
                batch_size,
                data_seed,
            } => {
                let p = problems::logistic_synthetic(dim, n_samples, data_seed.unwrap_or(run_seed))?;
                Box::new(match batch_size {
                    Some(b) => p.with_batch_size(b)?,
                    None => p,
                })
            }
            ProblemSpec::TinyMlp {
                widths,
                n_samples,
                data_seed,
            } => Box::new(problems::tiny_mlp(widths, n_samples, data_seed.unwrap_or(run_seed))?),
        };
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum OptimizerSpec {
    Powerstep(PowerStepConfig),
    /// Always runs with `β = 0`; a configured `beta` is ignored.
    Signsgdm(PowerStepConfig),
    Pbsgdm(PowerStepConfig),
    Adamw(AdamWConfig),
}

impl OptimizerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerSpec::Powerstep(_) => "powerstep",
            OptimizerSpec::Signsgdm(_) => "signsgdm",
            OptimizerSpec::Pbsgdm(_) => "pbsgdm",
            OptimizerSpec::Adamw(_) => "adamw",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerSpec::Powerstep(c) | OptimizerSpec::Signsgdm(c) | OptimizerSpec::Pbsgdm(c) => c.validate(),
            OptimizerSpec::Adamw(c) => c.validate(),
        }
    }
}

/// Prefix a parameter error with the config section it came from.
fn in_section(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => Error::config(format!("{section}.{name}"), reason),
        other => other,
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let field = e
                .span()
                .and_then(|s| text.get(s))
                .map(|s| s.trim().to_string())
                .unwrap_or_else(|| "<config>".into());
            Error::config(field, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<config>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::config("total_steps", "must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every", "must be at least 1"));
        }
        if self.block_size == 0 {
            return Err(Error::config("block_size", "must be at least 1"));
        }
        self.optimizer.validate().map_err(|e| in_section("optimizer", e))?;
        self.schedule.validate().map_err(|e| in_section("schedule", e))?;
        if self.quant == QuantMode::Q8 && matches!(self.optimizer, OptimizerSpec::Pbsgdm(_)) {
            return Err(Error::config("quant", "q8 is available for powerstep, signsgdm and adamw only"));
        }
        self.problem.build(self.seed).map_err(|e| in_section("problem", e))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
total_steps = 100
seed = 1

[problem]
kind = "quadratic"
dim = 8
condition_number = 10.0

[optimizer]
name = "powerstep"
gamma = 0.9
beta = 0.1

[schedule]
kind = "constant"
lr = 0.01
"#;

    #[test]
    fn parses_with_defaults() {
        let c = RunConfig::from_toml_str(BASE).unwrap();
        assert_eq!(c.log_every, 1);
        assert_eq!(c.quant, QuantMode::Fp);
        assert_eq!(c.block_size, 128);
        match c.optimizer {
            OptimizerSpec::Powerstep(p) => assert_eq!(p.weight_decay, 0.1),
            _ => panic!("wrong optimizer"),
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::from_toml_str(BASE).unwrap();
        let again = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash(), again.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            (BASE.replace("total_steps = 100", "total_steps = 0"), "total_steps"),
            (BASE.replace("seed = 1", "seed = 1\nbogus = 3"), "bogus"),
            (BASE.replace("gamma = 0.9", "gamma = 1.5"), "optimizer.gamma"),
            (BASE.replace("beta = 0.1", "beta = 2.0"), "beta"),
            (BASE.replace("lr = 0.01", "lr = -1.0"), "schedule.lr"),
            (BASE.replace("dim = 8", "dim = 0"), "problem.dim"),
            (BASE.replace("gamma = 0.9", "gamma = 0.9\nmomentum = 1"), "momentum"),
            (BASE.replace("\"powerstep\"", "\"lion\""), "lion"),
        ];
        for (text, field) in cases {
            let err = RunConfig::from_toml_str(&text).unwrap_err().to_string();
            assert!(err.contains(field), "{field}: {err}");
        }
    }

    #[test]
    fn clipping_can_be_disabled() {
        let c = RunConfig::from_toml_str(&BASE.replace("beta = 0.1", "beta = 0.1\nclip_norm = false")).unwrap();
        assert!(matches!(c.optimizer, OptimizerSpec::Powerstep(p) if p.clip_norm.is_none()));
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap(), c);
        let on = RunConfig::from_toml_str(&BASE.replace("beta = 0.1", "beta = 0.1\nclip_norm = 2.5")).unwrap();
        assert!(matches!(on.optimizer, OptimizerSpec::Powerstep(p) if p.clip_norm == Some(2.5)));
        assert!(RunConfig::from_toml_str(&BASE.replace("beta = 0.1", "beta = 0.1\nclip_norm = true")).is_err());
    }

    #[test]
    fn q8_pbsgdm_rejected() {
        let text = BASE.replace("\"powerstep\"", "\"pbsgdm\"").replace("seed = 1", "seed = 1\nquant = \"q8\"");
        let err = RunConfig::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("quant"), "{err}");
    }

    #[test]
    fn presets_resolve() {
        for name in ["quadratic", "rosenbrock", "logistic", "tiny_mlp"] {
            ProblemSpec::preset(name).unwrap().build(0).unwrap();
        }
        assert!(ProblemSpec::preset("ackley").is_err());
    }
}
