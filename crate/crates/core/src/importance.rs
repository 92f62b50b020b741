//! Bit allocation from importance maps.
//!
//! A frame with importance `p` under scaling factor `l` gets the prefix mask
//! `m_k = H(l*p - k)` for `k = 0..N_q-1`, i.e. depth `min(floor(l*p) + 1, N_q)`.
//! The step is not differentiable, so training uses the log-cosh soft step
//!
//! ```text
//! f_k(s) = 1/(2a) * ln( cosh(a(s - k)) / cosh(a(k + 1 - s)) ) + 1/2
//! ```
//!
//! for the backward pass only (straight-through).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{check_dim, FeatureSequence};
use crate::io::{self, ByteReader};

/// Per-frame importance scores, each strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap(Vec<f64>);

impl ImportanceMap {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Empty("importance map"));
        }
        if p.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::config("importance values must lie in (0, 1)"));
        }
        Ok(Self(p))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleDistribution {
    pub min: f64,
    pub max: f64,
}

impl Default for ScaleDistribution {
    fn default() -> Self {
        Self { min: 0.8, max: 48.0 }
    }
}

impl ScaleDistribution {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && min < max && max.is_finite()) {
            return Err(Error::config(format!("scale range [{min}, {max}] is invalid")));
        }
        Ok(Self { min, max })
    }
}

/// Log-uniform draw on `[min, max]`.
pub fn sample_scale(rng: &mut impl Rng, dist: &ScaleDistribution) -> f64 {
    let (lo, hi) = (dist.min.ln(), dist.max.ln());
    let u: f64 = rng.random();
    (lo + u * (hi - lo)).exp().clamp(dist.min, dist.max)
}

/// Evaluation of the soft step `f_k` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftStep {
    pub value: f64,
    /// `1 - value`, computed without cancellation so that it stays exact in
    /// the saturated region where `value` rounds to 1.
    pub complement: f64,
    pub derivative: f64,
}

/// `ln cosh x` without overflow.
fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Value of `f_k(s)` for `s <= k + 1/2`, accurate down to underflow.
fn lower_half(s: f64, k: f64, alpha: f64) -> f64 {
    let a = alpha * (s - k);
    if a <= 0.0 {
        // f = ln((1 + x) / (1 + x c)) / 2a with x = e^{2a}, c = e^{-2a_total}
        let x = (2.0 * a).exp();
        let one_minus_c = -(-2.0 * alpha).exp_m1();
        let c = 1.0 - one_minus_c;
        (x * one_minus_c / (1.0 + x * c)).ln_1p() / (2.0 * alpha)
    } else {
        let b = alpha - a;
        0.5 + (log_cosh(a) - log_cosh(b)) / (2.0 * alpha)
    }
}

/// The smooth surrogate of the step at stage `k` and its derivative in `s`.
pub fn surrogate(s: f64, k: usize, alpha: f64) -> SoftStep {
    let kf = k as f64;
    let mid = kf + 0.5;
    let (value, complement) = if s <= mid {
        let v = lower_half(s, kf, alpha);
        (v, 1.0 - v)
    } else {
        // f_k(2k + 1 - s) = 1 - f_k(s)
        let c = lower_half(2.0 * kf + 1.0 - s, kf, alpha);
        (1.0 - c, c)
    };
    // (tanh a + tanh b)/2 = sinh(alpha) / (2 cosh a cosh b), with a + b = alpha.
    let a = alpha * (s - kf);
    let b = alpha * (kf + 1.0 - s);
    let log_sinh = alpha + (-(-2.0 * alpha).exp()).ln_1p() - std::f64::consts::LN_2;
    let derivative = 0.5 * (log_sinh - log_cosh(a) - log_cosh(b)).exp();
    SoftStep {
        value,
        complement,
        derivative,
    }
}

/// `(value, d value / ds)` of the soft step.
pub fn surrogate_eval(s: f64, k: usize, alpha: f64) -> (f64, f64) {
    let r = surrogate(s, k, alpha);
    (r.value, r.derivative)
}

/// Hard mask column: entry `k` is 1 iff `l * p >= k`.
pub fn i2m_hard(p: f64, l: f64, n_q: usize) -> Vec<u8> {
    let s = l * p;
    (0..n_q).map(|k| u8::from(s >= k as f64)).collect()
}

/// Depth implied by the hard mask, always in `[1, n_q]` for positive `l * p`.
pub fn depth_for(p: f64, l: f64, n_q: usize) -> usize {
    let s = l * p;
    (0..n_q).take_while(|&k| s >= k as f64).count().max(1)
}

/// Straight-through mask: the forward column is the hard mask, the backward
/// column holds `d m_k / d p = l * f_k'(l p)`.
pub fn i2m_ste(p: f64, l: f64, alpha: f64, n_q: usize) -> (Vec<u8>, Vec<f64>) {
    let s = l * p;
    let sens = (0..n_q).map(|k| l * surrogate(s, k, alpha).derivative).collect();
    (i2m_hard(p, l, n_q), sens)
}

/// Soft mask column used when the forward pass itself is relaxed.
pub fn i2m_soft(p: f64, l: f64, alpha: f64, n_q: usize) -> (Vec<f64>, Vec<f64>) {
    let s = l * p;
    (0..n_q)
        .map(|k| {
            let r = surrogate(s, k, alpha);
            (r.value, l * r.derivative)
        })
        .unzip()
}

/// Mean importance; its gradient is `1/T` in every entry.
pub fn rate_loss(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::Empty("importance map"));
    }
    Ok(p.iter().sum::<f64>() / p.len() as f64)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Keeps a sigmoid output strictly inside (0, 1).
pub(crate) fn open_unit(v: f64) -> f64 {
    v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub const CONTEXT: usize = 2;
const TAPS: usize = 2 * CONTEXT + 1;

/// Per-frame importance network: five stacked neighbouring frames, one tanh
/// hidden layer, sigmoid output.
///
/// Parameter layout: `W1 (H x 5D)`, `b1 (H)`, `w2 (H)`, `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceNet {
    dim: usize,
    hidden: usize,
    params: Vec<f64>,
}

const VIMP_MAGIC: &[u8; 4] = b"VIMP";
const VIMP_VERSION: u8 = 1;

struct FrameActivations {
    input: Vec<f64>,
    hidden: Vec<f64>,
    p: f64,
}

impl ImportanceNet {
    pub fn param_count(dim: usize, hidden: usize) -> usize {
        (TAPS * dim + 1) * hidden + hidden + 1
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            dim,
            hidden,
            params: vec![0.0; Self::param_count(dim, hidden)],
        }
    }

    /// Uniform Glorot initialization of the weights; biases start at zero.
    pub fn init(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut net = Self::zeros(dim, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = TAPS * dim;
        let r1 = (6.0 / (fan_in + hidden) as f64).sqrt();
        for w in &mut net.params[..hidden * fan_in] {
            *w = rng.random_range(-r1..r1);
        }
        let r2 = (6.0 / (hidden + 1) as f64).sqrt();
        let w2 = hidden * fan_in + hidden;
        for w in &mut net.params[w2..w2 + hidden] {
            *w = rng.random_range(-r2..r2);
        }
        net
    }

    pub fn from_params(dim: usize, hidden: usize, params: Vec<f64>) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::config("importance net dimensions must be positive"));
        }
        let expected = Self::param_count(dim, hidden);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("importance net parameters"));
        }
        Ok(Self { dim, hidden, params })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], f64) {
        let fan_in = TAPS * self.dim;
        let (w1, rest) = self.params.split_at(self.hidden * fan_in);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, rest) = rest.split_at(self.hidden);
        (w1, b1, w2, rest[0])
    }

    fn context(&self, z: &FeatureSequence, t: usize) -> Vec<f64> {
        let last = z.len() - 1;
        let mut input = Vec::with_capacity(TAPS * self.dim);
        for off in 0..TAPS {
            let src = (t + off).saturating_sub(CONTEXT).min(last);
            input.extend_from_slice(z.frame(src));
        }
        input
    }

    fn forward_frame(&self, z: &FeatureSequence, t: usize) -> FrameActivations {
        let (w1, b1, w2, b2) = self.split();
        let input = self.context(z, t);
        let fan_in = input.len();
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &w1[h * fan_in..(h + 1) * fan_in];
                let pre: f64 = row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>() + b1[h];
                pre.tanh()
            })
            .collect();
        let logit = hidden.iter().zip(w2).map(|(h, w)| h * w).sum::<f64>() + b2;
        FrameActivations {
            input,
            hidden,
            p: sigmoid(logit),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(VIMP_MAGIC);
        out.push(VIMP_VERSION);
        out.extend_from_slice(&(self.dim as u16).to_le_bytes());
        out.extend_from_slice(&(self.hidden as u16).to_le_bytes());
        io::put_f32s(&mut out, &self.params);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(VIMP_MAGIC)?;
        let version = r.u8()?;
        if version != VIMP_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim = usize::from(r.u16()?);
        let hidden = usize::from(r.u16()?);
        let params = r.f32s(Self::param_count(dim, hidden))?;
        r.finish()?;
        Self::from_params(dim, hidden, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&io::read_file(path.as_ref())?)
    }
}

pub fn importance_forward(net: &ImportanceNet, z: &FeatureSequence) -> Result<ImportanceMap> {
    check_dim(net.dim, z.dim())?;
    let p = (0..z.len()).map(|t| open_unit(net.forward_frame(z, t).p)).collect();
    ImportanceMap::new(p)
}

/// Reverse-mode gradient of `sum_t upstream[t] * p[t]` with respect to the
/// network parameters. The features are treated as constants: nothing is
/// propagated back into `z`.
pub fn importance_backward(net: &ImportanceNet, z: &FeatureSequence, upstream: &[f64]) -> Result<Vec<f64>> {
    check_dim(net.dim, z.dim())?;
    if upstream.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            got: upstream.len(),
        });
    }
    let fan_in = TAPS * net.dim;
    let hidden = net.hidden;
    let (_, _, w2, _) = net.split();
    let mut grad = vec![0.0; net.params.len()];
    let (g_w1, rest) = grad.split_at_mut(hidden * fan_in);
    let (g_b1, rest) = rest.split_at_mut(hidden);
    let (g_w2, g_b2) = rest.split_at_mut(hidden);
    for (t, &up) in upstream.iter().enumerate() {
        if up == 0.0 {
            continue;
        }
        let act = net.forward_frame(z, t);
        let d_logit = up * act.p * (1.0 - act.p);
        g_b2[0] += d_logit;
        for h in 0..hidden {
            g_w2[h] += d_logit * act.hidden[h];
            let d_pre = d_logit * w2[h] * (1.0 - act.hidden[h] * act.hidden[h]);
            g_b1[h] += d_pre;
            for (g, x) in g_w1[h * fan_in..(h + 1) * fan_in].iter_mut().zip(&act.input) {
                *g += d_pre * x;
            }
        }
    }
    Ok(grad)
}
