//! Small objectives with exact gradients and controlled gradient noise.

use rand::Rng as _;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// An objective with an exact gradient oracle and a stochastic one.
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn loss(&self, theta: &[f64]) -> f64;
    fn grad(&self, theta: &[f64]) -> Vec<f64>;
    /// Unbiased estimate of [`Problem::grad`].
    fn sample_grad(&self, theta: &[f64], rng: &mut Rng) -> Vec<f64>;
    /// Gradient Lipschitz constant, when the construction fixes one.
    fn smoothness(&self) -> Option<f64>;
    /// `(θ*, f*)` when known in closed form.
    fn optimum(&self) -> Option<(Vec<f64>, f64)>;
    /// `E‖sample_grad(θ) − grad(θ)‖²` at `theta`.
    fn noise_variance(&self, theta: &[f64]) -> f64;
    /// Deterministic default starting point.
    fn initial_point(&self, rng: &mut Rng) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `ξ ~ N(0, σ²/d · I)`.
    #[default]
    GaussianIsotropic,
    /// Coordinate `i` gets variance `σ²·w_i` with `w_i ∝ i + 1`, `Σ w = 1`.
    PerCoordinateScaled,
}

/// Additive zero-mean gradient noise with `E‖ξ‖² = σ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub sigma: f64,
    #[serde(default)]
    pub kind: NoiseKind,
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel {
        sigma: 0.0,
        kind: NoiseKind::GaussianIsotropic,
    };

    pub fn gaussian(sigma: f64) -> Result<Self> {
        let n = NoiseModel {
            sigma,
            kind: NoiseKind::GaussianIsotropic,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: format!("must be finite and non-negative, got {}", self.sigma),
            });
        }
        Ok(())
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    fn coordinate_std(&self, i: usize, d: usize) -> f64 {
        match self.kind {
            NoiseKind::GaussianIsotropic => self.sigma / (d as f64).sqrt(),
            NoiseKind::PerCoordinateScaled => {
                let total = (d * (d + 1) / 2) as f64;
                self.sigma * ((i + 1) as f64 / total).sqrt()
            }
        }
    }

    pub fn perturb(&self, g: &mut [f64], rng: &mut Rng) {
        if self.sigma == 0.0 {
            return;
        }
        let d = g.len();
        for (i, gi) in g.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            *gi += self.coordinate_std(i, d) * z;
        }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidParameter {
            name: "dim",
            reason: "must be at least 1".into(),
        });
    }
    Ok(())
}

/// `f(θ) = ½ Σ λ_i (θ_i − c_i)²` with diagonal curvature.
#[derive(Debug, Clone)]
pub struct Quadratic {
    name: String,
    diag: Vec<f64>,
    center: Vec<f64>,
    noise: NoiseModel,
    init: Vec<f64>,
}

/// Diagonal quadratic with eigenvalues log-spaced in `[1, condition_number]`,
/// minimized at the origin. Starts from the all-ones point.
pub fn quadratic(dim: usize, condition_number: f64) -> Result<Quadratic> {
    check_dim(dim)?;
    if !(condition_number >= 1.0 && condition_number.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "condition_number",
            reason: format!("must be ≥ 1, got {condition_number}"),
        });
    }
    let diag = if dim == 1 {
        vec![condition_number]
    } else {
        (0..dim)
            .map(|i| condition_number.powf(i as f64 / (dim - 1) as f64))
            .collect()
    };
    Ok(Quadratic {
        name: "quadratic".into(),
        diag,
        center: vec![0.0; dim],
        noise: NoiseModel::NONE,
        init: vec![1.0; dim],
    })
}

/// Unit-curvature quadratic whose gradient at the start point (the origin)
/// is `1` on the first coordinate of every block and `small` elsewhere.
///
/// Under blockwise quantization the squared gradients of the small
/// coordinates sit far below the block's step while the gradients
/// themselves do not, which is the regime where an int8 second moment
/// collapses to zero.
pub fn mixed_magnitude(dim: usize, block_size: usize, small: f64) -> Result<Quadratic> {
    check_dim(dim)?;
    if block_size == 0 {
        return Err(Error::InvalidParameter {
            name: "block_size",
            reason: "must be positive".into(),
        });
    }
    let center = (0..dim).map(|i| if i % block_size == 0 { 1.0 } else { small }).collect();
    Ok(Quadratic {
        name: "mixed_magnitude".into(),
        diag: vec![1.0; dim],
        center,
        noise: NoiseModel::NONE,
        init: vec![0.0; dim],
    })
}

impl Quadratic {
    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }
}

impl Problem for Quadratic {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        0.5 * theta
            .iter()
            .zip(&self.center)
            .zip(&self.diag)
            .map(|((t, c), l)| l * (t - c) * (t - c))
            .sum::<f64>()
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.center)
            .zip(&self.diag)
            .map(|((t, c), l)| l * (t - c))
            .collect()
    }

    fn sample_grad(&self, theta: &[f64], rng: &mut Rng) -> Vec<f64> {
        let mut g = self.grad(theta);
        self.noise.perturb(&mut g, rng);
        g
    }

    fn smoothness(&self) -> Option<f64> {
        self.diag.iter().copied().reduce(f64::max)
    }

    fn optimum(&self) -> Option<(Vec<f64>, f64)> {
        Some((self.center.clone(), 0.0))
    }

    fn noise_variance(&self, _theta: &[f64]) -> f64 {
        self.noise.variance()
    }

    fn initial_point(&self, _rng: &mut Rng) -> Vec<f64> {
        self.init.clone()
    }
}

/// Chained Rosenbrock `Σ 100(θ_{i+1} − θ_i²)² + (1 − θ_i)²`.
#[derive(Debug, Clone)]
pub struct Rosenbrock {
    dim: usize,
    noise: NoiseModel,
}

pub fn rosenbrock(dim: usize) -> Result<Rosenbrock> {
    if dim < 2 {
        return Err(Error::InvalidParameter {
            name: "dim",
            reason: "Rosenbrock needs at least 2 coordinates".into(),
        });
    }
    Ok(Rosenbrock {
        dim,
        noise: NoiseModel::NONE,
    })
}

impl Rosenbrock {
    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }
}

impl Problem for Rosenbrock {
    fn name(&self) -> &str {
        "rosenbrock"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, x: &[f64]) -> f64 {
        x.windows(2)
            .map(|w| {
                let a = w[1] - w[0] * w[0];
                let b = 1.0 - w[0];
                100.0 * a * a + b * b
            })
            .sum()
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for i in 0..x.len() - 1 {
            let a = x[i + 1] - x[i] * x[i];
            g[i] += -400.0 * x[i] * a - 2.0 * (1.0 - x[i]);
            g[i + 1] += 200.0 * a;
        }
        g
    }

    fn sample_grad(&self, theta: &[f64], rng: &mut Rng) -> Vec<f64> {
        let mut g = self.grad(theta);
        self.noise.perturb(&mut g, rng);
        g
    }

    fn smoothness(&self) -> Option<f64> {
        None
    }

    fn optimum(&self) -> Option<(Vec<f64>, f64)> {
        Some((vec![1.0; self.dim], 0.0))
    }

    fn noise_variance(&self, _theta: &[f64]) -> f64 {
        self.noise.variance()
    }

    fn initial_point(&self, _rng: &mut Rng) -> Vec<f64> {
        (0..self.dim).map(|i| if i % 2 == 0 { -1.2 } else { 1.0 }).collect()
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Binary logistic regression on a fixed synthetic dataset; stochastic
/// gradients are minibatch means drawn with replacement.
#[derive(Debug, Clone)]
pub struct Logistic {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
    batch_size: usize,
    smoothness: f64,
}

pub const DEFAULT_BATCH_SIZE: usize = 32;

/// Features `N(0, 1/d)`, labels drawn from a logistic teacher with `N(0, 4)`
/// weights.
pub fn logistic_synthetic(dim: usize, n_samples: usize, seed: u64) -> Result<Logistic> {
    check_dim(dim)?;
    if n_samples == 0 {
        return Err(Error::InvalidParameter {
            name: "n_samples",
            reason: "must be at least 1".into(),
        });
    }
    let mut r = rng::stream(seed, rng::streams::DATA);
    let scale = 1.0 / (dim as f64).sqrt();
    let teacher: Vec<f64> = (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            2.0 * z
        })
        .collect();
    let mut features = Vec::with_capacity(n_samples * dim);
    let mut labels = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let row: Vec<f64> = (0..dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                scale * z
            })
            .collect();
        let z: f64 = row.iter().zip(&teacher).map(|(a, b)| a * b).sum();
        let y = Bernoulli::new(sigmoid(z)).expect("probability in [0, 1]").sample(&mut r);
        labels.push(if y { 1.0 } else { 0.0 });
        features.extend(row);
    }
    let mean_sq = features.iter().map(|v| v * v).sum::<f64>() / n_samples as f64;
    Ok(Logistic {
        dim,
        features,
        labels,
        batch_size: DEFAULT_BATCH_SIZE.min(n_samples),
        smoothness: 0.25 * mean_sq,
    })
}

impl Logistic {
    pub fn with_batch_size(mut self, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidParameter {
                name: "batch_size",
                reason: "must be at least 1".into(),
            });
        }
        self.batch_size = batch_size;
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Gradient of the loss on sample `i` alone.
    pub fn sample_gradient(&self, theta: &[f64], i: usize) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.accumulate(theta, i, 1.0, &mut g);
        g
    }

    fn accumulate(&self, theta: &[f64], i: usize, weight: f64, g: &mut [f64]) {
        let x = self.row(i);
        let z: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
        let r = weight * (sigmoid(z) - self.labels[i]);
        for (gj, xj) in g.iter_mut().zip(x) {
            *gj += r * xj;
        }
    }
}

impl Problem for Logistic {
    fn name(&self) -> &str {
        "logistic"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        let n = self.n_samples();
        (0..n)
            .map(|i| {
                let z: f64 = self.row(i).iter().zip(theta).map(|(a, b)| a * b).sum();
                softplus(z) - self.labels[i] * z
            })
            .sum::<f64>()
            / n as f64
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.n_samples();
        let mut g = vec![0.0; self.dim];
        for i in 0..n {
            self.accumulate(theta, i, 1.0 / n as f64, &mut g);
        }
        g
    }

    fn sample_grad(&self, theta: &[f64], rng: &mut Rng) -> Vec<f64> {
        let n = self.n_samples();
        let mut g = vec![0.0; self.dim];
        let w = 1.0 / self.batch_size as f64;
        for _ in 0..self.batch_size {
            let i = rng.random_range(0..n);
            self.accumulate(theta, i, w, &mut g);
        }
        g
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.smoothness)
    }

    fn optimum(&self) -> Option<(Vec<f64>, f64)> {
        None
    }

    /// Per-draw variance of one sample gradient divided by the batch size.
    fn noise_variance(&self, theta: &[f64]) -> f64 {
        let full = self.grad(theta);
        let n = self.n_samples();
        let per_sample = (0..n)
            .map(|i| {
                self.sample_gradient(theta, i)
                    .iter()
                    .zip(&full)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n as f64;
        per_sample / self.batch_size as f64
    }

    fn initial_point(&self, _rng: &mut Rng) -> Vec<f64> {
        vec![0.0; self.dim]
    }
}

/// One-hidden-layer tanh network with squared loss
/// `1/(2n) Σ ‖W₂ tanh(W₁x + b₁) + b₂ − y‖²`.
///
/// Parameters are packed as `W₁` (row-major, hidden × input), `b₁`, `W₂`
/// (row-major, output × hidden), `b₂`.
#[derive(Debug, Clone)]
pub struct TinyMlp {
    d_in: usize,
    hidden: usize,
    d_out: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    batch_size: usize,
}

pub fn tiny_mlp(widths: [usize; 3], n_samples: usize, seed: u64) -> Result<TinyMlp> {
    let [d_in, hidden, d_out] = widths;
    if widths.contains(&0) {
        return Err(Error::InvalidParameter {
            name: "widths",
            reason: format!("all widths must be positive, got {widths:?}"),
        });
    }
    if n_samples == 0 {
        return Err(Error::InvalidParameter {
            name: "n_samples",
            reason: "must be at least 1".into(),
        });
    }
    let mut r = rng::stream(seed, rng::streams::DATA);
    let mut mlp = TinyMlp {
        d_in,
        hidden,
        d_out,
        inputs: (0..n_samples * d_in)
            .map(|_| StandardNormal.sample(&mut r))
            .collect(),
        targets: vec![0.0; n_samples * d_out],
        batch_size: DEFAULT_BATCH_SIZE.min(n_samples),
    };
    // targets come from a random teacher of the same shape
    let teacher = mlp.random_params(&mut r, 1.5);
    for i in 0..n_samples {
        let (_, out) = mlp.forward(&teacher, i);
        mlp.targets[i * d_out..(i + 1) * d_out].copy_from_slice(&out);
    }
    Ok(mlp)
}

impl TinyMlp {
    pub fn with_targets(mut self, targets: Vec<f64>) -> Result<Self> {
        if targets.len() != self.targets.len() {
            return Err(Error::DimMismatch {
                expected: self.targets.len(),
                found: targets.len(),
            });
        }
        self.targets = targets;
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.inputs.len() / self.d_in
    }

    pub fn widths(&self) -> [usize; 3] {
        [self.d_in, self.hidden, self.d_out]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.hidden * self.d_in;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.d_out * self.hidden;
        (w1, b1, w2)
    }

    fn random_params(&self, r: &mut Rng, gain: f64) -> Vec<f64> {
        let (w1_end, b1_end, w2_end) = self.offsets();
        let s1 = gain / (self.d_in as f64).sqrt();
        let s2 = gain / (self.hidden as f64).sqrt();
        (0..self.dim())
            .map(|k| {
                let z: f64 = StandardNormal.sample(r);
                if k < w1_end {
                    s1 * z
                } else if k < b1_end {
                    0.1 * z
                } else if k < w2_end {
                    s2 * z
                } else {
                    0.1 * z
                }
            })
            .collect()
    }

    /// Hidden activations and outputs for sample `i`.
    fn forward(&self, theta: &[f64], i: usize) -> (Vec<f64>, Vec<f64>) {
        let (w1_end, b1_end, w2_end) = self.offsets();
        let x = &self.inputs[i * self.d_in..(i + 1) * self.d_in];
        let (w1, b1) = (&theta[..w1_end], &theta[w1_end..b1_end]);
        let (w2, b2) = (&theta[b1_end..w2_end], &theta[w2_end..]);
        let h: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &w1[j * self.d_in..(j + 1) * self.d_in];
                (row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b1[j]).tanh()
            })
            .collect();
        let out = (0..self.d_out)
            .map(|k| {
                let row = &w2[k * self.hidden..(k + 1) * self.hidden];
                row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() + b2[k]
            })
            .collect();
        (h, out)
    }

    fn backprop(&self, theta: &[f64], i: usize, weight: f64, g: &mut [f64]) {
        let (w1_end, b1_end, w2_end) = self.offsets();
        let x = &self.inputs[i * self.d_in..(i + 1) * self.d_in];
        let y = &self.targets[i * self.d_out..(i + 1) * self.d_out];
        let (h, out) = self.forward(theta, i);
        let w2 = &theta[b1_end..w2_end];
        let err: Vec<f64> = out.iter().zip(y).map(|(o, t)| weight * (o - t)).collect();
        let mut dh = vec![0.0; self.hidden];
        for k in 0..self.d_out {
            g[w2_end + k] += err[k];
            for j in 0..self.hidden {
                g[b1_end + k * self.hidden + j] += err[k] * h[j];
                dh[j] += err[k] * w2[k * self.hidden + j];
            }
        }
        for j in 0..self.hidden {
            let dz = dh[j] * (1.0 - h[j] * h[j]);
            g[w1_end + j] += dz;
            for (gi, xi) in g[j * self.d_in..(j + 1) * self.d_in].iter_mut().zip(x) {
                *gi += dz * xi;
            }
        }
    }
}

impl Problem for TinyMlp {
    fn name(&self) -> &str {
        "tiny_mlp"
    }

    fn dim(&self) -> usize {
        self.hidden * self.d_in + self.hidden + self.d_out * self.hidden + self.d_out
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        let n = self.n_samples();
        (0..n)
            .map(|i| {
                let (_, out) = self.forward(theta, i);
                let y = &self.targets[i * self.d_out..(i + 1) * self.d_out];
                out.iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>()
            })
            .sum::<f64>()
            / (2.0 * n as f64)
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.n_samples();
        let mut g = vec![0.0; self.dim()];
        for i in 0..n {
            self.backprop(theta, i, 1.0 / n as f64, &mut g);
        }
        g
    }

    fn sample_grad(&self, theta: &[f64], rng: &mut Rng) -> Vec<f64> {
        let n = self.n_samples();
        let mut g = vec![0.0; self.dim()];
        let w = 1.0 / self.batch_size as f64;
        for _ in 0..self.batch_size {
            let i = rng.random_range(0..n);
            self.backprop(theta, i, w, &mut g);
        }
        g
    }

    fn smoothness(&self) -> Option<f64> {
        None
    }

    fn optimum(&self) -> Option<(Vec<f64>, f64)> {
        None
    }

    fn noise_variance(&self, theta: &[f64]) -> f64 {
        let full = self.grad(theta);
        let n = self.n_samples();
        let mut acc = 0.0;
        for i in 0..n {
            let mut gi = vec![0.0; self.dim()];
            self.backprop(theta, i, 1.0, &mut gi);
            acc += gi.iter().zip(&full).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        acc / n as f64 / self.batch_size as f64
    }

    fn initial_point(&self, rng: &mut Rng) -> Vec<f64> {
        self.random_params(rng, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn fd_check(p: &dyn Problem, theta: &[f64], h: f64, tol: f64) {
        let g = p.grad(theta);
        let mut x = theta.to_vec();
        for i in 0..theta.len() {
            x[i] = theta[i] + h;
            let fp = p.loss(&x);
            x[i] = theta[i] - h;
            let fm = p.loss(&x);
            x[i] = theta[i];
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g[i]).abs() <= tol * (1.0 + g[i].abs()), "{}[{i}]: fd {fd} vs {}", p.name(), g[i]);
        }
    }

    #[test]
    fn quadratic_examples() {
        let q = quadratic(1, 1.0).unwrap();
        assert_eq!(q.loss(&[2.0]), 2.0);
        assert_eq!(q.grad(&[2.0]), vec![2.0]);
        let q = quadratic(2, 100.0).unwrap();
        assert_eq!(q.diag(), &[1.0, 100.0]);
        assert_eq!(q.loss(&[1.0, 1.0]), 50.5);
        assert_eq!(q.smoothness(), Some(100.0));
        assert_eq!(q.optimum().unwrap().1, 0.0);
        assert!(quadratic(0, 10.0).is_err());
        assert!(quadratic(4, 0.5).is_err());
    }

    #[test]
    fn quadratic_eigenvalues_are_log_spaced() {
        let q = quadratic(5, 1e4).unwrap();
        let want = [1.0, 10.0, 100.0, 1000.0, 1e4];
        for (a, b) in q.diag().iter().zip(want) {
            assert!((a - b).abs() < 1e-9 * b);
        }
    }

    #[test]
    fn finite_difference_smoke() {
        let mut r = stream(1, 0);
        let q = quadratic(64, 1e3).unwrap();
        let th: Vec<f64> = (0..64).map(|_| r.random_range(-1.0..1.0)).collect();
        fd_check(&q, &th, 1e-5, 1e-6);
        let rb = rosenbrock(6).unwrap();
        let th: Vec<f64> = (0..6).map(|_| r.random_range(-1.5..1.5)).collect();
        fd_check(&rb, &th, 1e-6, 1e-5);
        let lg = logistic_synthetic(16, 50, 3).unwrap();
        let th: Vec<f64> = (0..16).map(|_| r.random_range(-1.0..1.0)).collect();
        fd_check(&lg, &th, 1e-5, 1e-6);
        let mlp = tiny_mlp([3, 5, 2], 20, 4).unwrap();
        let th = mlp.initial_point(&mut r);
        fd_check(&mlp, &th, 1e-5, 1e-6);
    }

    #[test]
    fn rosenbrock_examples() {
        let rb = rosenbrock(5).unwrap();
        assert_eq!(rb.loss(&[1.0; 5]), 0.0);
        assert_eq!(rb.grad(&[1.0; 5]), vec![0.0; 5]);
        assert_eq!(rosenbrock(2).unwrap().loss(&[0.0, 0.0]), 1.0);
        assert!(rosenbrock(1).is_err());
    }

    #[test]
    fn logistic_examples() {
        let lg = logistic_synthetic(8, 200, 1).unwrap();
        assert!((lg.loss(&[0.0; 8]) - std::f64::consts::LN_2).abs() < 1e-14);
        let th = vec![0.3; 8];
        let full = lg.grad(&th);
        let mut mean = vec![0.0; 8];
        for i in 0..lg.n_samples() {
            for (m, g) in mean.iter_mut().zip(lg.sample_gradient(&th, i)) {
                *m += g / lg.n_samples() as f64;
            }
        }
        for (a, b) in full.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-14);
        }
        // same seed, same data
        let again = logistic_synthetic(8, 200, 1).unwrap();
        assert_eq!(again.loss(&th), lg.loss(&th));
        assert!(logistic_synthetic(8, 0, 1).is_err());
    }

    #[test]
    fn minibatch_mean_is_unbiased() {
        let lg = logistic_synthetic(8, 100, 2).unwrap().with_batch_size(4).unwrap();
        let th = vec![0.5; 8];
        let full = lg.grad(&th);
        let var = lg.noise_variance(&th);
        let sigma = var.sqrt();
        let mut r = stream(5, 0);
        let n = 10_000;
        let mut mean = [0.0; 8];
        let mut sq = 0.0;
        for _ in 0..n {
            let g = lg.sample_grad(&th, &mut r);
            sq += g.iter().zip(&full).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            for (m, gi) in mean.iter_mut().zip(&g) {
                *m += gi / n as f64;
            }
        }
        for (m, f) in mean.iter().zip(&full) {
            assert!((m - f).abs() <= 3.0 * sigma / 100.0);
        }
        let emp = sq / n as f64;
        assert!((emp - var).abs() < 0.1 * var, "{emp} vs {var}");
    }

    #[test]
    fn gaussian_noise_matches_configured_variance() {
        for kind in [NoiseKind::GaussianIsotropic, NoiseKind::PerCoordinateScaled] {
            let noise = NoiseModel { sigma: 2.0, kind };
            let q = quadratic(16, 10.0).unwrap().with_noise(noise);
            let th = vec![0.7; 16];
            let full = q.grad(&th);
            let mut r = stream(8, 1);
            let n = 10_000;
            let mut mean = [0.0; 16];
            let mut sq = 0.0;
            for _ in 0..n {
                let g = q.sample_grad(&th, &mut r);
                sq += g.iter().zip(&full).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                for (m, gi) in mean.iter_mut().zip(&g) {
                    *m += gi / n as f64;
                }
            }
            for (m, f) in mean.iter().zip(&full) {
                assert!((m - f).abs() <= 3.0 * 2.0 / 100.0);
            }
            // E‖ξ‖² = 4; stderr of the mean of a χ²-like sum ≈ 4·√(2/16)/100
            let emp = sq / n as f64;
            assert!(emp <= 4.0 + 3.0 * 4.0 * (2.0f64).sqrt() / 100.0, "{emp}");
            assert!(emp >= 3.8);
        }
        assert!(NoiseModel::gaussian(-1.0).is_err());
    }

    #[test]
    fn smoothness_probe() {
        let mut r = stream(2, 2);
        let problems: Vec<Box<dyn Problem>> = vec![
            Box::new(quadratic(32, 50.0).unwrap()),
            Box::new(logistic_synthetic(32, 300, 9).unwrap()),
        ];
        for p in &problems {
            let l = p.smoothness().unwrap();
            for _ in 0..50 {
                let x: Vec<f64> = (0..32).map(|_| r.random_range(-3.0..3.0)).collect();
                let y: Vec<f64> = (0..32).map(|_| r.random_range(-3.0..3.0)).collect();
                let gd: f64 = p.grad(&x).iter().zip(p.grad(&y)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let xd: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                assert!(gd <= l * xd * (1.0 + 1e-12), "{}: {gd} > {l}·{xd}", p.name());
            }
        }
    }

    #[test]
    fn mlp_zero_output_layer_and_permutation() {
        let mlp = tiny_mlp([4, 6, 3], 30, 11).unwrap();
        let mut r = stream(4, 4);
        let mut th = mlp.initial_point(&mut r);
        let (w1_end, b1_end, _) = mlp.offsets();
        let mut zeroed = th.clone();
        zeroed[b1_end..].fill(0.0);
        let n = mlp.n_samples() as f64;
        let want = mlp.targets().iter().map(|t| t * t).sum::<f64>() / (2.0 * n);
        assert!((mlp.loss(&zeroed) - want).abs() < 1e-14);

        // zero targets with zero output weights give zero loss
        let z = mlp.clone().with_targets(vec![0.0; mlp.targets().len()]).unwrap();
        assert_eq!(z.loss(&zeroed), 0.0);

        // swap hidden units 1 and 4
        let base = mlp.loss(&th);
        let (din, h) = (4, 6);
        for c in 0..din {
            th.swap(din + c, 4 * din + c);
        }
        th.swap(w1_end + 1, w1_end + 4);
        for k in 0..3 {
            th.swap(b1_end + k * h + 1, b1_end + k * h + 4);
        }
        assert!((mlp.loss(&th) - base).abs() < 1e-14);
        assert!(tiny_mlp([0, 3, 1], 5, 0).is_err());
    }

    #[test]
    fn mixed_magnitude_gradient_pattern() {
        let p = mixed_magnitude(256, 128, 0.02).unwrap();
        let g = p.grad(&p.initial_point(&mut stream(0, 0)));
        assert_eq!(g[0], -1.0);
        assert_eq!(g[128], -1.0);
        assert_eq!(g[1], -0.02);
        assert_eq!(p.optimum().unwrap().1, 0.0);
    }
}
