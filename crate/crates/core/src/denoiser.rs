//! Feature denoising ahead of quantization.
//!
//! A masker network turns the noisy features into a multiplicative mask,
//! `z_hat = sigmoid(beta * F(z_noisy)) * z_noisy`, trained with an L1
//! guidance loss against the clean branch on top of the rate-distortion
//! objective.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{check_dim, FeatureSequence};
use crate::importance::{importance_backward, open_unit, sigmoid, ImportanceNet};
use crate::io::{self, par_map, ByteReader};
use crate::rvq::RvqModel;
use crate::vrvq::{
    draw_batch, plan_batch, sample_terms, train_importance, Allocation, Optimizer, TraceRow, TrainConfig,
    TrainingPair,
};

/// `1 / (1 + exp(-beta * x))`.
pub fn learnable_sigmoid(x: f64, beta: f64) -> f64 {
    sigmoid(beta * x)
}

/// Derivatives of [`learnable_sigmoid`] with respect to `x` and `beta`.
pub fn learnable_sigmoid_grad(x: f64, beta: f64) -> (f64, f64) {
    let s = sigmoid(beta * x);
    let ds = s * (1.0 - s);
    (beta * ds, x * ds)
}

const CONTEXT: usize = 1;
const TAPS: usize = 2 * CONTEXT + 1;

const VDNZ_MAGIC: &[u8; 4] = b"VDNZ";
const VDNZ_VERSION: u8 = 1;

/// Per-frame mask network over a three-frame window with a learnable
/// sigmoid slope. The slope is stored as its logarithm.
///
/// Parameter layout: `W1 (H x 3D)`, `b1 (H)`, `W2 (D x H)`, `b2 (D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMasker {
    dim: usize,
    hidden: usize,
    log_beta: f64,
    params: Vec<f64>,
}

/// Gradient with respect to every trainable quantity of a masker.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskerGrad {
    pub params: Vec<f64>,
    pub log_beta: f64,
}

struct FrameActivations {
    input: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl FeatureMasker {
    pub fn param_count(dim: usize, hidden: usize) -> usize {
        (TAPS * dim + 1) * hidden + (hidden + 1) * dim
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            dim,
            hidden,
            log_beta: 0.0,
            params: vec![0.0; Self::param_count(dim, hidden)],
        }
    }

    /// Glorot-uniform weights, zero biases, unit slope.
    pub fn init(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut m = Self::zeros(dim, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = TAPS * dim;
        let r1 = (6.0 / (fan_in + hidden) as f64).sqrt();
        for w in &mut m.params[..hidden * fan_in] {
            *w = rng.random_range(-r1..r1);
        }
        let r2 = (6.0 / (hidden + dim) as f64).sqrt();
        let w2 = hidden * fan_in + hidden;
        for w in &mut m.params[w2..w2 + dim * hidden] {
            *w = rng.random_range(-r2..r2);
        }
        m
    }

    pub fn from_params(dim: usize, hidden: usize, log_beta: f64, params: Vec<f64>) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::config("masker dimensions must be positive"));
        }
        let expected = Self::param_count(dim, hidden);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: params.len(),
            });
        }
        if !log_beta.is_finite() || params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("masker parameters"));
        }
        Ok(Self {
            dim,
            hidden,
            log_beta,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }

    pub fn log_beta(&self) -> f64 {
        self.log_beta
    }

    pub fn set_log_beta(&mut self, log_beta: f64) {
        self.log_beta = log_beta;
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let fan_in = TAPS * self.dim;
        let (w1, rest) = self.params.split_at(self.hidden * fan_in);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.dim * self.hidden);
        (w1, b1, w2, b2)
    }

    fn forward_frame(&self, z: &FeatureSequence, t: usize) -> FrameActivations {
        let (w1, b1, w2, b2) = self.split();
        let last = z.len() - 1;
        let mut input = Vec::with_capacity(TAPS * self.dim);
        for off in 0..TAPS {
            let src = (t + off).saturating_sub(CONTEXT).min(last);
            input.extend_from_slice(z.frame(src));
        }
        let fan_in = input.len();
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &w1[h * fan_in..(h + 1) * fan_in];
                (row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>() + b1[h]).tanh()
            })
            .collect();
        let logits = (0..self.dim)
            .map(|d| {
                let row = &w2[d * self.hidden..(d + 1) * self.hidden];
                row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + b2[d]
            })
            .collect();
        FrameActivations { input, hidden, logits }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(VDNZ_MAGIC);
        out.push(VDNZ_VERSION);
        out.extend_from_slice(&(self.dim as u16).to_le_bytes());
        out.extend_from_slice(&(self.hidden as u16).to_le_bytes());
        out.extend_from_slice(&(self.log_beta as f32).to_le_bytes());
        io::put_f32s(&mut out, &self.params);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(VDNZ_MAGIC)?;
        let version = r.u8()?;
        if version != VDNZ_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim = usize::from(r.u16()?);
        let hidden = usize::from(r.u16()?);
        let log_beta = f64::from(r.f32()?);
        let params = r.f32s(Self::param_count(dim, hidden))?;
        r.finish()?;
        Self::from_params(dim, hidden, log_beta, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&io::read_file(path.as_ref())?)
    }
}

/// Returns the denoised features and the mask, both `D x T`.
pub fn denoise_forward(masker: &FeatureMasker, z_noisy: &FeatureSequence) -> Result<(FeatureSequence, FeatureSequence)> {
    check_dim(masker.dim, z_noisy.dim())?;
    let beta = masker.beta();
    let mut z_hat = z_noisy.clone();
    let mut mask = FeatureSequence::zeros(masker.dim, z_noisy.len(), z_noisy.frame_rate);
    for t in 0..z_noisy.len() {
        let act = masker.forward_frame(z_noisy, t);
        for (d, &y) in act.logits.iter().enumerate() {
            let m = open_unit(learnable_sigmoid(y, beta));
            mask.frame_mut(t)[d] = m;
            z_hat.frame_mut(t)[d] *= m;
        }
    }
    Ok((z_hat, mask))
}

/// Gradient of `sum upstream[d,t] * z_hat[d,t]` with respect to the masker.
/// `upstream` is laid out like a feature sequence (frame-contiguous).
pub fn denoise_backward(masker: &FeatureMasker, z_noisy: &FeatureSequence, upstream: &[f64]) -> Result<MaskerGrad> {
    check_dim(masker.dim, z_noisy.dim())?;
    check_dim(z_noisy.as_slice().len(), upstream.len())?;
    let dim = masker.dim;
    let hidden = masker.hidden;
    let fan_in = TAPS * dim;
    let beta = masker.beta();
    let (_, _, w2, _) = masker.split();
    let mut grad = vec![0.0; masker.params.len()];
    let mut g_beta = 0.0;
    {
        let (g_w1, rest) = grad.split_at_mut(hidden * fan_in);
        let (g_b1, rest) = rest.split_at_mut(hidden);
        let (g_w2, g_b2) = rest.split_at_mut(dim * hidden);
        let mut d_hidden = vec![0.0; hidden];
        for t in 0..z_noisy.len() {
            let up = &upstream[t * dim..(t + 1) * dim];
            if up.iter().all(|&u| u == 0.0) {
                continue;
            }
            let act = masker.forward_frame(z_noisy, t);
            d_hidden.fill(0.0);
            for d in 0..dim {
                let d_mask = up[d] * z_noisy.frame(t)[d];
                let (dx, db) = learnable_sigmoid_grad(act.logits[d], beta);
                g_beta += d_mask * db;
                let d_logit = d_mask * dx;
                g_b2[d] += d_logit;
                for h in 0..hidden {
                    g_w2[d * hidden + h] += d_logit * act.hidden[h];
                    d_hidden[h] += d_logit * w2[d * hidden + h];
                }
            }
            for h in 0..hidden {
                let d_pre = d_hidden[h] * (1.0 - act.hidden[h] * act.hidden[h]);
                g_b1[h] += d_pre;
                for (g, x) in g_w1[h * fan_in..(h + 1) * fan_in].iter_mut().zip(&act.input) {
                    *g += d_pre * x;
                }
            }
        }
    }
    Ok(MaskerGrad {
        params: grad,
        log_beta: g_beta * beta,
    })
}

fn check_shapes(a: &FeatureSequence, b: &FeatureSequence) -> Result<()> {
    check_dim(a.dim(), b.dim())?;
    check_dim(a.len(), b.len())
}

/// Mean absolute difference over all `D x T` entries.
pub fn feature_guidance_loss(z_clean: &FeatureSequence, z_hat: &FeatureSequence) -> Result<f64> {
    check_shapes(z_clean, z_hat)?;
    let n = z_clean.as_slice().len() as f64;
    Ok(z_clean
        .as_slice()
        .iter()
        .zip(z_hat.as_slice())
        .map(|(c, h)| (c - h).abs())
        .sum::<f64>()
        / n)
}

/// Subgradient of [`feature_guidance_loss`] with respect to `z_hat`, taking
/// zero where the arguments agree.
pub fn feature_guidance_grad(z_clean: &FeatureSequence, z_hat: &FeatureSequence) -> Result<Vec<f64>> {
    check_shapes(z_clean, z_hat)?;
    let n = z_clean.as_slice().len() as f64;
    Ok(z_clean
        .as_slice()
        .iter()
        .zip(z_hat.as_slice())
        .map(|(c, h)| {
            let diff = h - c;
            if diff > 0.0 {
                1.0 / n
            } else if diff < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect())
}

pub fn total_loss(distortion: f64, rate: f64, feature: f64, lambda_rate: f64, lambda_feature: f64) -> f64 {
    distortion + lambda_rate * rate + lambda_feature * feature
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseTrainConfig {
    /// Weight of the guidance loss.
    pub lambda_feature: f64,
    /// Rate weight, optimizer and batch settings shared by both stages.
    pub base: TrainConfig,
    pub pretrain: bool,
    pub finetune: bool,
    pub pretrain_iterations: usize,
    pub finetune_iterations: usize,
}

impl Default for DenoiseTrainConfig {
    fn default() -> Self {
        Self {
            lambda_feature: 0.1,
            base: TrainConfig::default(),
            pretrain: true,
            finetune: true,
            pretrain_iterations: 1000,
            finetune_iterations: 1000,
        }
    }
}

impl DenoiseTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_feature >= 0.0 && self.lambda_feature.is_finite()) {
            return Err(Error::config("lambda_feature must be >= 0"));
        }
        self.base.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneStep {
    pub loss: f64,
    pub distortion: f64,
    pub rate: f64,
    pub feature: f64,
    pub mean_depth: f64,
    pub net_grad: Vec<f64>,
    pub masker_grad: MaskerGrad,
}

/// Joint loss and gradients for one fine-tuning batch. Each pair holds the
/// noisy features as `input` and the clean features as `target`.
///
/// The quantizer and the importance net consume the denoised features. The
/// importance net treats its input as a constant, and code selection is
/// piecewise constant, so the masker is driven by the guidance term alone.
pub fn finetune_evaluate(
    model: &RvqModel,
    net: &ImportanceNet,
    masker: &FeatureMasker,
    batch: &[TrainingPair],
    plan: &[Allocation],
    lambda_feature: f64,
    cfg: &TrainConfig,
) -> Result<FinetuneStep> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    check_dim(batch.len(), plan.len())?;
    let jobs: Vec<(&TrainingPair, Allocation)> = batch.iter().zip(plan.iter().copied()).collect();
    let results = par_map(&jobs, cfg.threads, |(pair, alloc)| {
        let (z_hat, _) = denoise_forward(masker, &pair.input)?;
        let feature = feature_guidance_loss(&pair.target, &z_hat)?;
        let terms = sample_terms(model, net, &z_hat, &pair.target, *alloc, cfg)?;
        let net_grad = importance_backward(net, &z_hat, &terms.d_p)?;
        let mut up = feature_guidance_grad(&pair.target, &z_hat)?;
        for u in &mut up {
            *u *= lambda_feature;
        }
        let masker_grad = denoise_backward(masker, &pair.input, &up)?;
        Ok::<_, Error>((terms, feature, net_grad, masker_grad))
    });
    let b = batch.len() as f64;
    let mut step = FinetuneStep {
        loss: 0.0,
        distortion: 0.0,
        rate: 0.0,
        feature: 0.0,
        mean_depth: 0.0,
        net_grad: vec![0.0; net.params().len()],
        masker_grad: MaskerGrad {
            params: vec![0.0; masker.params.len()],
            log_beta: 0.0,
        },
    };
    for r in results {
        let (terms, feature, net_grad, masker_grad) = r?;
        step.distortion += terms.distortion / b;
        step.rate += terms.rate / b;
        step.feature += feature / b;
        step.mean_depth += terms.mean_depth / b;
        for (g, v) in step.net_grad.iter_mut().zip(&net_grad) {
            *g += v / b;
        }
        for (g, v) in step.masker_grad.params.iter_mut().zip(&masker_grad.params) {
            *g += v / b;
        }
        step.masker_grad.log_beta += masker_grad.log_beta / b;
    }
    step.loss = total_loss(step.distortion, step.rate, step.feature, cfg.lambda_rate, lambda_feature);
    Ok(step)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinetuneTraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub distortion: f64,
    pub rate: f64,
    pub feature: f64,
    pub mean_depth: f64,
}

pub fn write_finetune_trace_csv(rows: &[FinetuneTraceRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FinetuneTraining {
    pub net: ImportanceNet,
    pub masker: FeatureMasker,
    pub trace: Vec<FinetuneTraceRow>,
}

/// Second stage: joint training of masker and importance net on paired data
/// with frozen codebooks.
pub fn finetune(
    model: &RvqModel,
    net: &ImportanceNet,
    masker: &FeatureMasker,
    paired: &[TrainingPair],
    cfg: &DenoiseTrainConfig,
) -> Result<FinetuneTraining> {
    cfg.validate()?;
    if paired.is_empty() {
        return Err(Error::Empty("paired training set"));
    }
    check_dim(model.dim(), masker.dim())?;
    let base = &cfg.base;
    let mut net = net.clone();
    let mut masker = masker.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(base.seed ^ 0x5eed_0002);
    let mut net_opt = Optimizer::new(net.params().len(), base.step_size, base.momentum);
    let mut masker_opt = Optimizer::new(masker.params.len() + 1, base.step_size, base.momentum);
    let mut trace = Vec::with_capacity(cfg.finetune_iterations);
    let mut flat = Vec::with_capacity(masker.params.len() + 1);
    for iteration in 0..cfg.finetune_iterations {
        let batch: Vec<TrainingPair> = draw_batch(paired, base.batch_size, &mut rng).into_iter().cloned().collect();
        let plan = plan_batch(batch.len(), base, &mut rng);
        let step = finetune_evaluate(model, &net, &masker, &batch, &plan, cfg.lambda_feature, base)?;
        if !step.loss.is_finite() {
            return Err(Error::Diverged {
                iteration,
                loss: step.loss,
            });
        }
        net_opt.apply(net.params_mut(), &step.net_grad);
        flat.clear();
        flat.extend_from_slice(&masker.params);
        flat.push(masker.log_beta);
        let mut grad = step.masker_grad.params.clone();
        grad.push(step.masker_grad.log_beta);
        masker_opt.apply(&mut flat, &grad);
        if flat.iter().chain(net.params()).any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                iteration,
                loss: step.loss,
            });
        }
        masker.log_beta = flat.pop().unwrap_or(masker.log_beta);
        masker.params.copy_from_slice(&flat);
        trace.push(FinetuneTraceRow {
            iteration,
            loss: step.loss,
            distortion: step.distortion,
            rate: step.rate,
            feature: step.feature,
            mean_depth: step.mean_depth,
        });
    }
    Ok(FinetuneTraining { net, masker, trace })
}

#[derive(Debug, Clone)]
pub struct TwoStageTraining {
    /// Importance net after the first stage.
    pub pretrained: ImportanceNet,
    pub net: ImportanceNet,
    pub masker: FeatureMasker,
    pub pretrain_trace: Vec<TraceRow>,
    pub finetune_trace: Vec<FinetuneTraceRow>,
}

/// Pretrains the importance net on clean features (masker bypassed), then
/// fine-tunes it jointly with the masker starting from the pretrained
/// weights.
pub fn two_stage_train(
    model: &RvqModel,
    net: &ImportanceNet,
    masker: &FeatureMasker,
    clean: &[FeatureSequence],
    paired: &[TrainingPair],
    cfg: &DenoiseTrainConfig,
) -> Result<TwoStageTraining> {
    cfg.validate()?;
    let (pretrained, pretrain_trace) = if cfg.pretrain {
        let data: Vec<TrainingPair> = clean.iter().cloned().map(TrainingPair::clean).collect();
        let stage = TrainConfig {
            iterations: cfg.pretrain_iterations,
            ..cfg.base.clone()
        };
        let out = train_importance(model, net, &data, &stage)?;
        (out.net, out.trace)
    } else {
        (net.clone(), Vec::new())
    };
    let (net, masker, finetune_trace) = if cfg.finetune {
        let out = finetune(model, &pretrained, masker, paired, cfg)?;
        (out.net, out.masker, out.trace)
    } else {
        (pretrained.clone(), masker.clone(), Vec::new())
    };
    Ok(TwoStageTraining {
        pretrained,
        net,
        masker,
        pretrain_trace,
        finetune_trace,
    })
}

/// Guidance loss averaged over pairs of (noisy input, clean target).
pub fn mean_guidance_loss(masker: &FeatureMasker, pairs: &[TrainingPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut total = 0.0;
    for pair in pairs {
        let (z_hat, _) = denoise_forward(masker, &pair.input)?;
        total += feature_guidance_loss(&pair.target, &z_hat)?;
    }
    Ok(total / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FrameRate;
    use crate::features::{synth_feature_dataset, SynthSpec};
    use crate::rvq::{train_codebooks, KMeansConfig};
    use crate::vrvq::{MaskForward, TrainingMode};

    fn seq(dim: usize, values: Vec<f64>) -> FeatureSequence {
        FeatureSequence::new(dim, values, FrameRate::default()).unwrap()
    }

    #[test]
    fn learnable_sigmoid_examples() {
        for beta in [0.1, 1.0, 7.5] {
            assert_eq!(learnable_sigmoid(0.0, beta), 0.5);
        }
        assert!((learnable_sigmoid(3f64.ln(), 1.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn learnable_sigmoid_derivatives() {
        let h = 1e-5;
        for &(x, beta) in &[(0.3, 1.0), (-1.7, 0.4), (2.2, 3.0), (0.0, 2.0)] {
            let (dx, db) = learnable_sigmoid_grad(x, beta);
            let fx = (learnable_sigmoid(x + h, beta) - learnable_sigmoid(x - h, beta)) / (2.0 * h);
            let fb = (learnable_sigmoid(x, beta + h) - learnable_sigmoid(x, beta - h)) / (2.0 * h);
            assert!((dx - fx).abs() <= 1e-8 * dx.abs().max(1e-3));
            assert!((db - fb).abs() <= 1e-8 * db.abs().max(1e-3));
        }
    }

    #[test]
    fn zero_masker_halves_input() {
        let m = FeatureMasker::zeros(2, 3);
        let z = seq(2, vec![1.0, -2.0, 4.0, 0.5]);
        let (z_hat, mask) = denoise_forward(&m, &z).unwrap();
        assert!(mask.as_slice().iter().all(|&v| v == 0.5));
        assert_eq!(z_hat.as_slice(), &[0.5, -1.0, 2.0, 0.25]);
    }

    #[test]
    fn zero_input_stays_zero() {
        let m = FeatureMasker::init(3, 4, 9);
        let z = FeatureSequence::zeros(3, 5, FrameRate::default());
        let (z_hat, _) = denoise_forward(&m, &z).unwrap();
        assert!(z_hat.as_slice().iter().all(|&v| v == 0.0));
        assert!(denoise_forward(&m, &FeatureSequence::zeros(2, 5, FrameRate::default())).is_err());
    }

    #[test]
    fn guidance_loss_examples() {
        let c = seq(1, vec![1.0, 2.0]);
        let h = seq(1, vec![0.0, 2.0]);
        assert_eq!(feature_guidance_loss(&c, &h).unwrap(), 0.5);
        assert_eq!(feature_guidance_loss(&c, &c).unwrap(), 0.0);
        assert_eq!(feature_guidance_grad(&c, &h).unwrap(), vec![-0.5, 0.0]);
        assert!(feature_guidance_loss(&c, &seq(2, vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn total_loss_examples() {
        assert!((total_loss(1.0, 0.2, 0.5, 3.0, 0.1) - 1.65).abs() < 1e-12);
        assert_eq!(total_loss(0.7, 0.2, 0.5, 0.0, 0.0), 0.7);
    }

    #[test]
    fn masker_backward_matches_finite_differences() {
        let dim = 3;
        let m = FeatureMasker::init(dim, 4, 1);
        let z = seq(dim, (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.6).collect());
        let weights: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let objective = |m: &FeatureMasker| {
            let (z_hat, _) = denoise_forward(m, &z).unwrap();
            z_hat.as_slice().iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
        };
        let g = denoise_backward(&m, &z, &weights).unwrap();
        let h = 1e-6;
        for i in (0..m.params.len()).step_by(5) {
            let mut a = m.clone();
            a.params[i] += h;
            let mut b = m.clone();
            b.params[i] -= h;
            let fd = (objective(&a) - objective(&b)) / (2.0 * h);
            assert!((fd - g.params[i]).abs() < 1e-7, "param {i}: {fd} vs {}", g.params[i]);
        }
        let mut a = m.clone();
        a.log_beta += h;
        let mut b = m.clone();
        b.log_beta -= h;
        let fd = (objective(&a) - objective(&b)) / (2.0 * h);
        assert!((fd - g.log_beta).abs() < 1e-7);
    }

    #[test]
    fn masker_file_roundtrip() {
        let m = FeatureMasker::init(4, 5, 3);
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"VDNZ");
        let back = FeatureMasker::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert!(FeatureMasker::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn finetune_starts_from_pretrained_weights() {
        let spec = SynthSpec {
            sequences: 4,
            frames: 16,
            dim: 4,
            ..SynthSpec::default()
        };
        let data = synth_feature_dataset(&spec, 0).unwrap();
        let clean: Vec<FeatureSequence> = data.iter().map(|p| p.clean.clone()).collect();
        let model = train_codebooks(&clean, 3, 2, &KMeansConfig::default(), 0).unwrap().model;
        let paired: Vec<TrainingPair> = data
            .iter()
            .map(|p| TrainingPair::from_synthetic(p, TrainingMode::SimpleMapping))
            .collect();
        let net = ImportanceNet::init(4, 6, 0);
        let masker = FeatureMasker::init(4, 6, 0);
        let cfg = DenoiseTrainConfig {
            pretrain_iterations: 5,
            finetune_iterations: 0,
            base: TrainConfig {
                batch_size: 2,
                mask_forward: MaskForward::Hard,
                ..TrainConfig::default()
            },
            ..DenoiseTrainConfig::default()
        };
        let out = two_stage_train(&model, &net, &masker, &clean, &paired, &cfg).unwrap();
        assert_eq!(out.net, out.pretrained);
        assert_eq!(out.masker, masker);
        assert_eq!(out.pretrain_trace.len(), 5);
        let again = two_stage_train(&model, &net, &masker, &clean, &paired, &cfg).unwrap();
        assert_eq!(again.net, out.net);
    }
}
