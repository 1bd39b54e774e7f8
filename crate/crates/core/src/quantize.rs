//! Blockwise symmetric int8 quantization of optimizer buffers.
//!
//! A buffer is cut into blocks of `block_size` coordinates (the last block
//! may be shorter). Each block keeps its absolute maximum `a` as an `f64`
//! and every coordinate becomes `round(127·x/a)` in `[−127, 127]`, rounding
//! half away from zero. Decoding is `code·a/127`, with the extreme codes
//! mapped straight back to `±a`, so the absmax coordinate comes back
//! bit-exact and every other coordinate is within half a quantization step
//! `a/127`.
//!
//! The quantized update kernels keep only codes and block maxima between
//! steps; the full-precision accumulator lives inside one call.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::optim::{adam_corrections, adam_direction, check_lr, prepare_grad, AdamWConfig, PowerStepConfig};
use crate::power_transform::{ensure_finite, signed_power_scalar};

pub const DEFAULT_BLOCK_SIZE: usize = 128;
pub const MAX_CODE: i8 = 127;

const DUMP_MAGIC: &[u8; 4] = b"PSQ8";
const DUMP_VERSION: u16 = 1;
/// magic + version (u16) + block_size (u32) + dim (u64)
pub const DUMP_HEADER_LEN: usize = 4 + 2 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBuffer {
    codes: Vec<i8>,
    /// Per-block absolute maximum; zero only for an all-zero block.
    scales: Vec<f64>,
    block_size: usize,
}

impl QuantizedBuffer {
    /// All-zero buffer of length `dim`.
    pub fn zeros(dim: usize, block_size: usize) -> Result<Self> {
        check_block_size(block_size)?;
        Ok(Self {
            codes: vec![0; dim],
            scales: vec![0.0; dim.div_ceil(block_size)],
            block_size,
        })
    }

    pub fn dim(&self) -> usize {
        self.codes.len()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn num_blocks(&self) -> usize {
        self.scales.len()
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// Quantization step `absmax/127` of block `b`.
    pub fn step(&self, b: usize) -> f64 {
        self.scales[b] / f64::from(MAX_CODE)
    }

    /// Worst-case absolute reconstruction error per coordinate of block `b`
    /// under the `‖x‖max/127` model.
    pub fn max_abs_error(&self, b: usize) -> f64 {
        self.step(b)
    }

    /// Storage footprint: one byte per code plus one `f64` per block.
    pub fn state_bytes(&self) -> usize {
        self.codes.len() + 8 * self.scales.len()
    }

    pub fn absmax(&self) -> f64 {
        self.scales.iter().copied().fold(0.0, f64::max)
    }

    /// Little-endian dump: header (magic `PSQ8`, version u16, block_size
    /// u32, dim u64), the codes, then one `f64` block maximum per block.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(DUMP_HEADER_LEN + self.codes.len() + 8 * self.scales.len());
        out.extend_from_slice(DUMP_MAGIC);
        out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.block_size as u32).to_le_bytes());
        out.extend_from_slice(&(self.codes.len() as u64).to_le_bytes());
        out.extend(self.codes.iter().map(|&c| c as u8));
        for s in &self.scales {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < DUMP_HEADER_LEN {
            return Err(Error::Dump(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != DUMP_MAGIC {
            return Err(Error::Dump("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != DUMP_VERSION {
            return Err(Error::Dump(format!("unsupported version {version}")));
        }
        let block_size = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let dim = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
        check_block_size(block_size).map_err(|_| Error::Dump("block_size is zero".into()))?;
        let nblocks = dim.div_ceil(block_size);
        let expected = DUMP_HEADER_LEN + dim + 8 * nblocks;
        if bytes.len() != expected {
            return Err(Error::Dump(format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let body = &bytes[DUMP_HEADER_LEN..];
        let codes: Vec<i8> = body[..dim].iter().map(|&b| b as i8).collect();
        if codes.contains(&i8::MIN) {
            return Err(Error::Dump("code −128 is outside the symmetric range".into()));
        }
        let scales: Vec<f64> = body[dim..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Dump("block maxima must be finite and non-negative".into()));
        }
        Ok(Self {
            codes,
            scales,
            block_size,
        })
    }

    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn check_block_size(block_size: usize) -> Result<()> {
    if block_size == 0 {
        return Err(Error::InvalidParameter {
            name: "block_size",
            reason: "must be positive".into(),
        });
    }
    Ok(())
}

/// Encode one block into `codes`, returning its absmax.
fn encode_block(x: &[f64], codes: &mut [i8]) -> f64 {
    let absmax = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if absmax == 0.0 {
        codes.fill(0);
        return 0.0;
    }
    let limit = f64::from(MAX_CODE);
    let inv = limit / absmax;
    for (c, &v) in codes.iter_mut().zip(x) {
        // f64::round rounds half away from zero
        *c = (v * inv).round().clamp(-limit, limit) as i8;
    }
    absmax
}

#[inline]
fn decode(code: i8, absmax: f64) -> f64 {
    match code {
        MAX_CODE => absmax,
        c if c == -MAX_CODE => -absmax,
        c => f64::from(c) * absmax / f64::from(MAX_CODE),
    }
}

pub fn quantize(x: &[f64], block_size: usize) -> Result<QuantizedBuffer> {
    check_block_size(block_size)?;
    ensure_finite(x, "x")?;
    let mut codes = vec![0i8; x.len()];
    let scales = x
        .chunks(block_size)
        .zip(codes.chunks_mut(block_size))
        .map(|(xb, cb)| encode_block(xb, cb))
        .collect();
    Ok(QuantizedBuffer {
        codes,
        scales,
        block_size,
    })
}

pub fn dequantize(q: &QuantizedBuffer) -> Vec<f64> {
    let mut out = vec![0.0; q.dim()];
    dequantize_into(q, &mut out);
    out
}

fn dequantize_into(q: &QuantizedBuffer, out: &mut [f64]) {
    for ((ob, cb), &a) in out
        .chunks_mut(q.block_size)
        .zip(q.codes.chunks(q.block_size))
        .zip(&q.scales)
    {
        for (o, &c) in ob.iter_mut().zip(cb) {
            *o = decode(c, a);
        }
    }
}

/// Quantized PowerStep state: the momentum buffer in int8 plus the counter.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMomentum {
    pub m: QuantizedBuffer,
    pub step: u64,
}

impl QuantizedMomentum {
    pub fn new(dim: usize, block_size: usize) -> Result<Self> {
        Ok(Self {
            m: QuantizedBuffer::zeros(dim, block_size)?,
            step: 0,
        })
    }
}

/// Quantized AdamW state: both moments in int8.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedAdam {
    pub m: QuantizedBuffer,
    pub v: QuantizedBuffer,
    pub step: u64,
}

impl QuantizedAdam {
    pub fn new(dim: usize, block_size: usize) -> Result<Self> {
        Ok(Self {
            m: QuantizedBuffer::zeros(dim, block_size)?,
            v: QuantizedBuffer::zeros(dim, block_size)?,
            step: 0,
        })
    }
}

/// Diagnostics from a quantized step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QuantStepStats {
    /// Largest stored block maximum after the step.
    pub absmax: f64,
    /// Largest `|dequantize(quantize(acc)) − acc|` over coordinates.
    pub max_quant_error: f64,
}

fn requantize(acc: &[f64], block_size: usize) -> Result<(QuantizedBuffer, f64)> {
    let q = quantize(acc, block_size)?;
    let err = dequantize(&q)
        .iter()
        .zip(acc)
        .fold(0.0f64, |e, (d, a)| e.max((d - a).abs()));
    Ok((q, err))
}

/// PowerStep with an int8 momentum buffer, reusing the gradient as the
/// accumulator:
///
/// ```text
/// g ← g + γ·dequantize(m)
/// m ← quantize(g)
/// g ← sign(g)·|g|^β
/// θ ← θ − η·(g + λ·θ)
/// ```
///
/// The transform and the parameter step read the full-precision `g`, not
/// the stored codes.
pub fn powerstep_update_q8(
    theta: &mut [f64],
    grad: &[f64],
    state: &mut QuantizedMomentum,
    cfg: &PowerStepConfig,
    lr: f64,
) -> Result<QuantStepStats> {
    check_lr(lr)?;
    let mut acc = prepare_grad(theta, grad, state.m.dim(), state.step, cfg.clip_norm)?;
    if cfg.gamma != 0.0 {
        let prev = dequantize(&state.m);
        for (a, p) in acc.iter_mut().zip(&prev) {
            *a += cfg.gamma * p;
        }
    }
    let (q, max_quant_error) = requantize(&acc, state.m.block_size)?;
    state.m = q;
    let wd = cfg.weight_decay;
    for (t, a) in theta.iter_mut().zip(&acc) {
        *t -= lr * (signed_power_scalar(*a, cfg.beta) + wd * *t);
    }
    state.step += 1;
    Ok(QuantStepStats {
        absmax: state.m.absmax(),
        max_quant_error,
    })
}

/// AdamW with both moments stored in int8 and the step computed from the
/// dequantized moments. Kept to reproduce the failure mode, not for use.
pub fn adamw_update_q8(
    theta: &mut [f64],
    grad: &[f64],
    state: &mut QuantizedAdam,
    cfg: &AdamWConfig,
    lr: f64,
) -> Result<QuantStepStats> {
    check_lr(lr)?;
    if state.v.dim() != state.m.dim() {
        return Err(Error::DimMismatch {
            expected: state.m.dim(),
            found: state.v.dim(),
        });
    }
    let g = prepare_grad(theta, grad, state.m.dim(), state.step, cfg.clip_norm)?;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let mut m = dequantize(&state.m);
    let mut v = dequantize(&state.v);
    for ((mi, vi), gi) in m.iter_mut().zip(v.iter_mut()).zip(&g) {
        *mi = b1 * *mi + (1.0 - b1) * gi;
        *vi = b2 * *vi + (1.0 - b2) * gi * gi;
    }
    let (qm, em) = requantize(&m, state.m.block_size)?;
    let (qv, ev) = requantize(&v, state.v.block_size)?;
    state.m = qm;
    state.v = qv;
    let m_t = dequantize(&state.m);
    let v_t = dequantize(&state.v);
    let (bc1, bc2) = adam_corrections(cfg, state.step + 1);
    let wd = cfg.weight_decay;
    for ((t, mi), vi) in theta.iter_mut().zip(&m_t).zip(&v_t) {
        *t -= lr * (adam_direction(mi / bc1, vi / bc2, cfg.epsilon) + wd * *t);
    }
    state.step += 1;
    Ok(QuantStepStats {
        absmax: state.m.absmax().max(state.v.absmax()),
        max_quant_error: em.max(ev),
    })
}

/// First-order error in `1/(√v + ε)` caused by a perturbation `δ` of `v`:
/// `δ / (2√v(√v + ε)²)`.
pub fn reciprocal_sqrt_error_term(v: f64, epsilon: f64, delta: f64) -> f64 {
    let r = v.sqrt();
    delta / (2.0 * r * (r + epsilon) * (r + epsilon))
}

/// How one accumulation rule behaved in [`ema_stall_probe`].
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StallArm {
    /// Stored code of the probe coordinate after each step.
    pub codes: Vec<i8>,
    /// First step (1-based) at which the stored code differed from its
    /// initial value.
    pub first_change: Option<u64>,
}

impl StallArm {
    pub fn stalled(&self) -> bool {
        self.first_change.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct StallReport {
    pub increment_magnitude: f64,
    pub coeff: f64,
    pub block_scale: f64,
    pub ema: StallArm,
    pub heavy_ball: StallArm,
}

/// Feed a constant gradient into one coordinate of a quantized block under
/// EMA accumulation `m ← c·m + (1−c)·g` and heavy-ball accumulation
/// `m ← c·m + g`, re-quantizing after every step.
///
/// The block also holds an anchor coordinate pinned at `127·block_scale`,
/// so the quantization step stays at `block_scale` throughout. Both buffers
/// start at zero.
pub fn ema_stall_probe(increment_magnitude: f64, ema_coeff: f64, steps: u64, block_scale: f64) -> Result<StallReport> {
    if !(0.0..1.0).contains(&ema_coeff) {
        return Err(Error::InvalidParameter {
            name: "ema_coeff",
            reason: format!("must lie in [0, 1), got {ema_coeff}"),
        });
    }
    if !(block_scale > 0.0 && block_scale.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "block_scale",
            reason: format!("must be positive, got {block_scale}"),
        });
    }
    if !increment_magnitude.is_finite() {
        return Err(Error::NonFinite {
            what: "increment_magnitude",
            index: 0,
        });
    }
    let anchor = f64::from(MAX_CODE) * block_scale;
    let c = ema_coeff;
    // anchor gradients that keep the anchor coordinate at a fixed point
    let ema = run_stall_arm(steps, anchor, |m, anchor_side| {
        let g = if anchor_side { anchor } else { increment_magnitude };
        c * m + (1.0 - c) * g
    })?;
    let heavy_ball = run_stall_arm(steps, anchor, |m, anchor_side| {
        let g = if anchor_side { (1.0 - c) * anchor } else { increment_magnitude };
        c * m + g
    })?;
    Ok(StallReport {
        increment_magnitude,
        coeff: c,
        block_scale,
        ema,
        heavy_ball,
    })
}

fn run_stall_arm(steps: u64, anchor: f64, rule: impl Fn(f64, bool) -> f64) -> Result<StallArm> {
    let mut q = quantize(&[anchor, 0.0], 2)?;
    let initial = q.codes[1];
    let mut codes = Vec::with_capacity(steps as usize);
    let mut first_change = None;
    for t in 1..=steps {
        let prev = dequantize(&q);
        // the anchor is re-pinned so rounding in its own rule cannot drift the step size
        let acc = [anchor.max(rule(prev[0], true)), rule(prev[1], false)];
        q = quantize(&acc, 2)?;
        codes.push(q.codes[1]);
        if first_change.is_none() && q.codes[1] != initial {
            first_change = Some(t);
        }
    }
    Ok(StallArm { codes, first_change })
}
