//! Signed power transform and the norm helpers used to reason about it.
//!
//! `Φ_β(x) = sign(x) ⊙ |x|^β` dampens large magnitudes and amplifies small
//! ones for `β < 1`. At `β = 1` it is the identity and at `β = 0` it is
//! `sign(x)` with `sign(0) = 0`.

use crate::error::{Error, Result};

/// Exponent `β ∈ [0, 1]` of the signed power transform.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PowerExponent(f64);

impl PowerExponent {
    pub fn new(beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidParameter {
                name: "beta",
                reason: format!("must lie in [0, 1], got {beta}"),
            });
        }
        Ok(Self(beta))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    /// The `p` of the `ℓp` geometry this exponent comes from, `p = 1 + 1/β`.
    /// `None` for `β = 0` (the `ℓ∞` limit).
    pub fn lp_exponent(self) -> Option<f64> {
        (self.0 > 0.0).then(|| 1.0 + 1.0 / self.0)
    }
}

impl TryFrom<f64> for PowerExponent {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<PowerExponent> for f64 {
    fn from(value: PowerExponent) -> Self {
        value.0
    }
}

/// Scalar `sign(a)·|a|^β`.
///
/// Zero maps to zero for every `β`. Powers are evaluated as `exp(β·ln|a|)`
/// behind the exact-zero branch; `β = 0` and `β = 1` take exact shortcuts.
#[inline]
pub fn signed_power_scalar(a: f64, beta: PowerExponent) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let b = beta.0;
    if b == 1.0 {
        a
    } else if b == 0.0 {
        a.signum()
    } else {
        (b * a.abs().ln()).exp().copysign(a)
    }
}

/// Elementwise `Φ_β(x)`.
pub fn signed_power(x: &[f64], beta: PowerExponent) -> Result<Vec<f64>> {
    ensure_finite(x, "x")?;
    Ok(x.iter().map(|&a| signed_power_scalar(a, beta)).collect())
}

/// In-place `Φ_β`. The caller is responsible for finiteness.
pub fn signed_power_in_place(x: &mut [f64], beta: PowerExponent) {
    for a in x.iter_mut() {
        *a = signed_power_scalar(*a, beta);
    }
}

/// `Σ |x_i|^p` for `p > 0`.
pub fn lp_norm_pow(x: &[f64], p: f64) -> Result<f64> {
    check_p(p)?;
    ensure_finite(x, "x")?;
    Ok(x.iter().map(|&a| abs_pow(a, p)).sum())
}

/// `(Σ |x_i|^p)^{1/p}`. Values of `p` in `(0, 1)` give the quasi-norm.
pub fn lp_norm(x: &[f64], p: f64) -> Result<f64> {
    let s = lp_norm_pow(x, p)?;
    Ok(if p == 1.0 { s } else { s.powf(1.0 / p) })
}

/// Euclidean inner product.
pub fn inner(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(x.iter().zip(y).map(|(a, b)| a * b).sum())
}

/// Hölder constant `C_β = 2^{1−β}·d^{(1−β)/(1+β)}` of `Φ_β` measured in `ℓ_{1+β}`.
pub fn holder_constant(beta: PowerExponent, d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidParameter {
            name: "d",
            reason: "dimension must be at least 1".into(),
        });
    }
    let b = beta.0;
    Ok(2f64.powf(1.0 - b) * (d as f64).powf((1.0 - b) / (1.0 + b)))
}

/// `|a|^p` with `0^p = 0`.
#[inline]
pub(crate) fn abs_pow(a: f64, p: f64) -> f64 {
    let m = a.abs();
    if m == 0.0 {
        0.0
    } else if p == 1.0 {
        m
    } else if p == 2.0 {
        m * m
    } else {
        (p * m.ln()).exp()
    }
}

fn check_p(p: f64) -> Result<()> {
    if p.is_nan() || p <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "p",
            reason: format!("norm exponent must be positive, got {p}"),
        });
    }
    Ok(())
}

pub(crate) fn ensure_finite(x: &[f64], what: &'static str) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}
