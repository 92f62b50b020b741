//! Variable-bitrate encoding, the rate-distortion objective and the
//! importance-network training loop.
//!
//! A VBR encoding always stores the full cascade of codes; the per-frame
//! depth only decides which prefix is summed at decode time and which
//! indices reach the wire.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bitstream::{self, StreamParams};
use crate::error::{Error, Result};
use crate::eval::{self, DistortionMetrics, Metric, RdCurve, RdPoint};
use crate::features::{check_dim, FeatureSequence, FrameRate, SyntheticPair};
use crate::importance::{
    depth_for, i2m_soft, i2m_ste, importance_backward, importance_forward, ImportanceMap, ImportanceNet,
    ScaleDistribution,
};
use crate::io::par_map;
use crate::rvq::{rvq_decode, rvq_encode, CodeMatrix, RvqModel};

/// Scaling factors of the default VBR sweep.
pub const DEFAULT_SCALES: [f64; 8] = [1.6, 2.6, 4.2, 6.9, 11.1, 18.1, 29.6, 48.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EncodingMode {
    Vbr { scale: f64 },
    Cbr { depth: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VrvqEncoding {
    pub codes: CodeMatrix,
    pub depths: Vec<usize>,
    pub mode: EncodingMode,
    /// Present for VBR encodings only.
    pub importance: Option<ImportanceMap>,
    pub frame_rate: FrameRate,
}

impl VrvqEncoding {
    pub fn reconstruct(&self, model: &RvqModel) -> Result<FeatureSequence> {
        rvq_decode(model, &self.codes, &self.depths, self.frame_rate)
    }

    pub fn mean_depth(&self) -> f64 {
        self.depths.iter().sum::<usize>() as f64 / self.depths.len() as f64
    }
}

pub fn vrvq_encode(model: &RvqModel, net: &ImportanceNet, z: &FeatureSequence, scale: f64) -> Result<VrvqEncoding> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::config(format!("scale {scale} must be positive")));
    }
    check_dim(model.dim(), z.dim())?;
    let p = importance_forward(net, z)?;
    let depths = p.values().iter().map(|&pt| depth_for(pt, scale, model.stages())).collect();
    Ok(VrvqEncoding {
        codes: rvq_encode(model, z)?,
        depths,
        mode: EncodingMode::Vbr { scale },
        importance: Some(p),
        frame_rate: z.frame_rate,
    })
}

/// Fixed-depth encoding that bypasses the importance map.
pub fn cbr_encode(model: &RvqModel, z: &FeatureSequence, depth: usize) -> Result<VrvqEncoding> {
    if depth == 0 || depth > model.stages() {
        return Err(Error::DepthOutOfRange {
            depth,
            max: model.stages(),
        });
    }
    Ok(VrvqEncoding {
        codes: rvq_encode(model, z)?,
        depths: vec![depth; z.len()],
        mode: EncodingMode::Cbr { depth },
        importance: None,
        frame_rate: z.frame_rate,
    })
}

/// `z_q[t] = sum_i m_i[t] * Q_i(r_i[t])` over the whole cascade, with masks
/// given per frame.
pub fn masked_sum(model: &RvqModel, codes: &CodeMatrix, masks: &[Vec<u8>], frame_rate: FrameRate) -> Result<FeatureSequence> {
    if masks.len() != codes.frames() {
        return Err(Error::DimensionMismatch {
            expected: codes.frames(),
            got: masks.len(),
        });
    }
    let mut out = FeatureSequence::zeros(model.dim(), codes.frames(), frame_rate);
    for (t, mask) in masks.iter().enumerate() {
        check_dim(model.stages(), mask.len())?;
        let frame = out.frame_mut(t);
        for (i, &m) in mask.iter().enumerate() {
            let q = model.codebook(i).row(codes.get(i, t) as usize);
            for (o, v) in frame.iter_mut().zip(q) {
                *o += f64::from(m) * v;
            }
        }
    }
    Ok(out)
}

/// What the importance net is fed and what the reconstruction is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TrainingMode {
    /// Input and target are both the clean features.
    CleanReconstruction,
    /// Input is the noisy features, target the clean ones.
    SimpleMapping,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub input: FeatureSequence,
    pub target: FeatureSequence,
}

impl TrainingPair {
    pub fn new(input: FeatureSequence, target: FeatureSequence) -> Result<Self> {
        check_dim(input.dim(), target.dim())?;
        if input.len() != target.len() {
            return Err(Error::DimensionMismatch {
                expected: input.len(),
                got: target.len(),
            });
        }
        Ok(Self { input, target })
    }

    pub fn clean(z: FeatureSequence) -> Self {
        Self {
            input: z.clone(),
            target: z,
        }
    }

    pub fn from_synthetic(pair: &SyntheticPair, mode: TrainingMode) -> Self {
        match mode {
            TrainingMode::CleanReconstruction => Self::clean(pair.clean.clone()),
            TrainingMode::SimpleMapping => Self {
                input: pair.noisy.clone(),
                target: pair.clean.clone(),
            },
        }
    }
}

/// Which mask values the forward pass uses. `Hard` is the straight-through
/// training setting; `Soft` replaces the forward mask by the surrogate so the
/// loss becomes differentiable end to end (gradient checking).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskForward {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda_rate: f64,
    pub full_depth_fraction: f64,
    pub scales: ScaleDistribution,
    pub alpha: f64,
    pub step_size: f64,
    /// Heavy-ball coefficient; 0 is plain gradient descent.
    pub momentum: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mask_forward: MaskForward,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_rate: 3.0,
            full_depth_fraction: 0.25,
            scales: ScaleDistribution::default(),
            alpha: 2.0,
            step_size: 1e-2,
            momentum: 0.9,
            iterations: 1000,
            batch_size: 8,
            seed: 0,
            mask_forward: MaskForward::Hard,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_rate >= 0.0 && self.lambda_rate.is_finite()) {
            return Err(Error::config("lambda_rate must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.full_depth_fraction) {
            return Err(Error::config("full_depth_fraction must lie in [0, 1]"));
        }
        ScaleDistribution::new(self.scales.min, self.scales.max)?;
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha must be positive"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config("step size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        Ok(())
    }
}

/// Bit allocation drawn for one batch member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Allocation {
    Scaled(f64),
    /// All `N_q` stages; the member carries no rate term.
    FullDepth,
}

/// `round(fraction * B)` members at full depth, chosen at random; the rest
/// draw a log-uniform scale.
pub fn plan_batch(batch_size: usize, cfg: &TrainConfig, rng: &mut impl Rng) -> Vec<Allocation> {
    let full = (cfg.full_depth_fraction * batch_size as f64).round() as usize;
    let mut order: Vec<usize> = (0..batch_size).collect();
    order.shuffle(rng);
    let mut plan = vec![Allocation::FullDepth; batch_size];
    for &i in &order[full.min(batch_size)..] {
        plan[i] = Allocation::Scaled(crate::importance::sample_scale(rng, &cfg.scales));
    }
    plan
}

/// Loss terms and `dL/dp` for a single batch member.
#[derive(Debug, Clone)]
pub(crate) struct SampleTerms {
    pub distortion: f64,
    /// Mean importance, or 0 for full-depth members.
    pub rate: f64,
    pub mean_depth: f64,
    /// Sensitivity of `distortion + lambda * rate` to each `p[t]`.
    pub d_p: Vec<f64>,
}

pub(crate) fn sample_terms(
    model: &RvqModel,
    net: &ImportanceNet,
    input: &FeatureSequence,
    target: &FeatureSequence,
    alloc: Allocation,
    cfg: &TrainConfig,
) -> Result<SampleTerms> {
    check_dim(model.dim(), input.dim())?;
    check_dim(input.len(), target.len())?;
    let n_q = model.stages();
    let dim = model.dim();
    let frames = input.len();
    let p = importance_forward(net, input)?;
    let scale_dt = 2.0 / (dim * frames) as f64;

    let mut codes = Vec::with_capacity(n_q);
    let mut words: Vec<Vec<f64>> = Vec::with_capacity(n_q);
    let mut sq_err = 0.0;
    let mut depth_sum = 0.0;
    let mut d_p = vec![0.0; frames];
    for t in 0..frames {
        codes.clear();
        words.clear();
        model.encode_frame(input.frame(t), &mut codes, |_, q| words.push(q.to_vec()));
        let (mask, sens): (Vec<f64>, Vec<f64>) = match alloc {
            Allocation::FullDepth => (vec![1.0; n_q], vec![0.0; n_q]),
            Allocation::Scaled(l) => match cfg.mask_forward {
                MaskForward::Hard => {
                    let (m, s) = i2m_ste(p.values()[t], l, cfg.alpha, n_q);
                    (m.into_iter().map(f64::from).collect(), s)
                }
                MaskForward::Soft => i2m_soft(p.values()[t], l, cfg.alpha, n_q),
            },
        };
        depth_sum += match alloc {
            Allocation::FullDepth => n_q as f64,
            Allocation::Scaled(l) => depth_for(p.values()[t], l, n_q) as f64,
        };
        let mut err = target.frame(t).to_vec();
        for (m, q) in mask.iter().zip(&words) {
            for (e, v) in err.iter_mut().zip(q) {
                *e -= m * v;
            }
        }
        sq_err += err.iter().map(|e| e * e).sum::<f64>();
        if let Allocation::Scaled(_) = alloc {
            let mut g = 0.0;
            for (s, q) in sens.iter().zip(&words) {
                if *s != 0.0 {
                    let dot: f64 = err.iter().zip(q).map(|(e, v)| e * v).sum();
                    g += -scale_dt * dot * s;
                }
            }
            d_p[t] = g + cfg.lambda_rate / frames as f64;
        }
    }
    let rate = match alloc {
        Allocation::FullDepth => 0.0,
        Allocation::Scaled(_) => crate::importance::rate_loss(p.values())?,
    };
    Ok(SampleTerms {
        distortion: sq_err / (dim * frames) as f64,
        rate,
        mean_depth: depth_sum / frames as f64,
        d_p,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdStep {
    /// `distortion + lambda_rate * rate`.
    pub loss: f64,
    /// Batch mean of the feature MSE.
    pub distortion: f64,
    /// Batch mean of the rate term; full-depth members contribute zero.
    pub rate: f64,
    pub mean_depth: f64,
    pub grad: Vec<f64>,
}

/// Loss and parameter gradient for a batch under a fixed allocation plan.
pub fn rd_evaluate(
    model: &RvqModel,
    net: &ImportanceNet,
    batch: &[TrainingPair],
    plan: &[Allocation],
    cfg: &TrainConfig,
) -> Result<RdStep> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if plan.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            got: plan.len(),
        });
    }
    let jobs: Vec<(&TrainingPair, Allocation)> = batch.iter().zip(plan.iter().copied()).collect();
    let results = par_map(&jobs, cfg.threads, |(pair, alloc)| -> Result<(SampleTerms, Vec<f64>)> {
        let terms = sample_terms(model, net, &pair.input, &pair.target, *alloc, cfg)?;
        let grad = importance_backward(net, &pair.input, &terms.d_p)?;
        Ok((terms, grad))
    });
    let b = batch.len() as f64;
    let mut step = RdStep {
        loss: 0.0,
        distortion: 0.0,
        rate: 0.0,
        mean_depth: 0.0,
        grad: vec![0.0; net.params().len()],
    };
    for r in results {
        let (terms, grad) = r?;
        step.distortion += terms.distortion / b;
        step.rate += terms.rate / b;
        step.mean_depth += terms.mean_depth / b;
        for (g, v) in step.grad.iter_mut().zip(&grad) {
            *g += v / b;
        }
    }
    step.loss = step.distortion + cfg.lambda_rate * step.rate;
    Ok(step)
}

/// Draws an allocation plan from `rng` and evaluates the batch.
pub fn rd_step(
    model: &RvqModel,
    net: &ImportanceNet,
    batch: &[TrainingPair],
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<RdStep> {
    let plan = plan_batch(batch.len(), cfg, rng);
    rd_evaluate(model, net, batch, &plan, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub distortion: f64,
    pub rate: f64,
    pub mean_depth: f64,
}

pub fn write_trace_csv(rows: &[TraceRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Heavy-ball gradient descent state over a flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct Optimizer {
    step: f64,
    momentum: f64,
    velocity: Vec<f64>,
}

impl Optimizer {
    pub fn new(len: usize, step: f64, momentum: f64) -> Self {
        Self {
            step,
            momentum,
            velocity: vec![0.0; len],
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g;
            *p -= self.step * *v;
        }
    }
}

pub(crate) fn draw_batch<'a, T>(data: &'a [T], size: usize, rng: &mut impl Rng) -> Vec<&'a T> {
    (0..size).map(|_| &data[rng.random_range(0..data.len())]).collect()
}

#[derive(Debug, Clone)]
pub struct ImportanceTraining {
    pub net: ImportanceNet,
    pub trace: Vec<TraceRow>,
}

/// Trains the importance net against frozen codebooks.
pub fn train_importance(
    model: &RvqModel,
    net: &ImportanceNet,
    dataset: &[TrainingPair],
    cfg: &TrainConfig,
) -> Result<ImportanceTraining> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training set"));
    }
    check_dim(model.dim(), net.dim())?;
    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(net.params().len(), cfg.step_size, cfg.momentum);
    let mut trace = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let batch: Vec<TrainingPair> = draw_batch(dataset, cfg.batch_size, &mut rng).into_iter().cloned().collect();
        let step = rd_step(model, &net, &batch, cfg, &mut rng)?;
        if !step.loss.is_finite() || step.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration,
                loss: step.loss,
            });
        }
        opt.apply(net.params_mut(), &step.grad);
        if net.params().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                iteration,
                loss: step.loss,
            });
        }
        trace.push(TraceRow {
            iteration,
            loss: step.loss,
            distortion: step.distortion,
            rate: step.rate,
            mean_depth: step.mean_depth,
        });
        if iteration % 100 == 0 {
            log::debug!("iter {iteration}: loss {:.5} depth {:.3}", step.loss, step.mean_depth);
        }
    }
    Ok(ImportanceTraining { net, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepMode {
    Vbr,
    Cbr,
}

impl SweepMode {
    pub fn label(self) -> &'static str {
        match self {
            SweepMode::Vbr => "vbr",
            SweepMode::Cbr => "cbr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub mode: SweepMode,
    /// Scaling factor for VBR points, depth for CBR points.
    pub setting: f64,
    /// Packed payload bits per second over the whole set, side info included.
    pub bitrate_kbps: f64,
    pub side_info_kbps: f64,
    pub mean_depth: f64,
    /// Per-sequence metrics averaged over the set.
    pub metrics: DistortionMetrics,
}

/// Encodes every pair at each VBR scale and each CBR depth, packs the
/// streams to measure bitrate, and scores reconstructions against targets.
pub fn sweep_curves(
    model: &RvqModel,
    net: &ImportanceNet,
    eval_set: &[TrainingPair],
    scales: &[f64],
    depths: &[usize],
    threads: usize,
) -> Result<Vec<SweepPoint>> {
    let first = eval_set.first().ok_or(Error::Empty("evaluation set"))?;
    let rate = first.input.frame_rate;
    if eval_set.iter().any(|p| p.input.frame_rate != rate) {
        return Err(Error::config("evaluation set mixes frame rates"));
    }
    let params = StreamParams::for_model(model, rate);
    let settings: Vec<EncodingMode> = scales
        .iter()
        .map(|&scale| EncodingMode::Vbr { scale })
        .chain(depths.iter().map(|&depth| EncodingMode::Cbr { depth }))
        .collect();
    let results = par_map(&settings, threads, |&mode| -> Result<SweepPoint> {
        let mut bits = 0u64;
        let mut frames = 0usize;
        let mut depth_total = 0usize;
        let mut metrics = DistortionMetrics {
            mse: 0.0,
            si_sdr: 0.0,
            lsd: 0.0,
        };
        let n = eval_set.len() as f64;
        for pair in eval_set {
            let enc = match mode {
                EncodingMode::Vbr { scale } => vrvq_encode(model, net, &pair.input, scale)?,
                EncodingMode::Cbr { depth } => cbr_encode(model, &pair.input, depth)?,
            };
            let stream = bitstream::pack(&enc, &params)?;
            bits += stream.payload_bits;
            frames += enc.depths.len();
            depth_total += enc.depths.iter().sum::<usize>();
            let m = eval::distortion_metrics(&pair.target, &enc.reconstruct(model)?)?;
            metrics.mse += m.mse / n;
            metrics.si_sdr += m.si_sdr / n;
            metrics.lsd += m.lsd / n;
        }
        let side_bits = match mode {
            EncodingMode::Vbr { .. } => bitstream::depth_bits(model.stages()),
            EncodingMode::Cbr { .. } => 0,
        };
        Ok(SweepPoint {
            mode: match mode {
                EncodingMode::Vbr { .. } => SweepMode::Vbr,
                EncodingMode::Cbr { .. } => SweepMode::Cbr,
            },
            setting: match mode {
                EncodingMode::Vbr { scale } => scale,
                EncodingMode::Cbr { depth } => depth as f64,
            },
            bitrate_kbps: bits as f64 * rate.hz() / frames as f64 / 1000.0,
            side_info_kbps: f64::from(side_bits) * rate.hz() / 1000.0,
            mean_depth: depth_total as f64 / frames as f64,
            metrics,
        })
    });
    results.into_iter().collect()
}

/// Builds the CBR curve and the VBR curve for one metric. With `endpoints`,
/// the VBR curve is anchored by the single-stage and full-depth CBR results
/// of the same model, and VBR points outside that bitrate span are dropped.
/// Lower-is-better metrics are negated so quality always increases.
pub fn rd_curves(points: &[SweepPoint], metric: Metric, endpoints: bool, max_depth: usize) -> Result<(RdCurve, RdCurve)> {
    let sign = if metric.higher_is_better() { 1.0 } else { -1.0 };
    let to_point = |p: &SweepPoint, label: &str| RdPoint {
        bitrate_kbps: p.bitrate_kbps,
        quality: sign * p.metrics.get(metric),
        label: label.to_string(),
    };
    let cbr: Vec<RdPoint> = points
        .iter()
        .filter(|p| p.mode == SweepMode::Cbr)
        .map(|p| to_point(p, "cbr"))
        .collect();
    let mut vbr: Vec<RdPoint> = points
        .iter()
        .filter(|p| p.mode == SweepMode::Vbr)
        .map(|p| to_point(p, "vbr"))
        .collect();
    if endpoints {
        let find = |d: usize| {
            points
                .iter()
                .find(|p| p.mode == SweepMode::Cbr && p.setting == d as f64)
                .ok_or_else(|| Error::config(format!("endpoint convention needs the CBR depth-{d} point")))
        };
        let lo = find(1)?;
        let hi = find(max_depth)?;
        vbr.retain(|p| p.bitrate_kbps > lo.bitrate_kbps && p.bitrate_kbps < hi.bitrate_kbps);
        vbr.push(to_point(lo, "vbr"));
        vbr.push(to_point(hi, "vbr"));
    }
    Ok((
        RdCurve::new("cbr", metric.name(), cbr)?,
        RdCurve::new("vbr", metric.name(), vbr)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rvq::Codebook;

    fn rate() -> FrameRate {
        FrameRate::default()
    }

    fn model_1d() -> RvqModel {
        let c1 = Codebook::new(1, vec![0.0, 8.0]).unwrap();
        let c2 = Codebook::new(1, vec![0.0, 1.0]).unwrap();
        let c3 = Codebook::new(1, vec![0.0, 0.5]).unwrap();
        RvqModel::new(vec![c1, c2, c3], 1).unwrap()
    }

    fn seq(values: &[f64]) -> FeatureSequence {
        FeatureSequence::new(1, values.to_vec(), rate()).unwrap()
    }

    #[test]
    fn zero_net_gives_constant_depth() {
        let codebooks = (0..8).map(|_| Codebook::new(1, vec![0.0, 1.0]).unwrap()).collect();
        let model = RvqModel::new(codebooks, 1).unwrap();
        let net = ImportanceNet::zeros(1, 4);
        let z = seq(&[0.3, 2.0, -1.0, 5.5]);
        let enc = vrvq_encode(&model, &net, &z, 8.0).unwrap();
        assert_eq!(enc.depths, vec![5; 4]);
        // Saturation: l * 0.5 >= N_q - 1 means every frame is full depth.
        let enc = vrvq_encode(&model, &net, &z, 14.0).unwrap();
        assert_eq!(enc.depths, vec![8; 4]);
        let cbr = cbr_encode(&model, &z, 8).unwrap();
        assert_eq!(enc.reconstruct(&model).unwrap(), cbr.reconstruct(&model).unwrap());
    }

    #[test]
    fn masked_sum_equals_prefix_decode() {
        let model = model_1d();
        let z = seq(&[9.5, 8.4, 1.2, 0.0, 3.3]);
        let codes = rvq_encode(&model, &z).unwrap();
        let depths = [1, 3, 2, 1, 3];
        let masks: Vec<Vec<u8>> = depths.iter().map(|&d| (0..3).map(|i| u8::from(i < d)).collect()).collect();
        let a = masked_sum(&model, &codes, &masks, rate()).unwrap();
        let b = rvq_decode(&model, &codes, &depths, rate()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cbr_examples() {
        let model = model_1d();
        let z = seq(&[9.5, 1.2]);
        let one = cbr_encode(&model, &z, 1).unwrap().reconstruct(&model).unwrap();
        assert_eq!(one.as_slice(), &[8.0, 0.0]);
        let full = cbr_encode(&model, &z, 3).unwrap().reconstruct(&model).unwrap();
        assert_eq!(full.as_slice(), &[9.5, 1.0]);
        assert!(cbr_encode(&model, &z, 0).is_err());
        assert!(cbr_encode(&model, &z, 4).is_err());
    }

    #[test]
    fn rd_step_global_optimum() {
        // Targets on stage-1 codewords, rate weight zero, importance pushed low.
        let model = model_1d();
        let mut net = ImportanceNet::zeros(1, 2);
        *net.params_mut().last_mut().unwrap() = -30.0;
        let batch = vec![TrainingPair::clean(seq(&[8.0, 0.0, 8.0]))];
        let cfg = TrainConfig {
            lambda_rate: 0.0,
            ..TrainConfig::default()
        };
        let step = rd_evaluate(&model, &net, &batch, &[Allocation::Scaled(4.0)], &cfg).unwrap();
        assert_eq!(step.loss, 0.0);
        assert!(step.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn loss_decomposes() {
        let model = model_1d();
        let net = ImportanceNet::init(1, 3, 0);
        let batch = vec![
            TrainingPair::clean(seq(&[9.5, 8.4, 1.2])),
            TrainingPair::clean(seq(&[0.7, 3.3, 8.8])),
        ];
        let cfg = TrainConfig::default();
        let step = rd_evaluate(&model, &net, &batch, &[Allocation::Scaled(2.0), Allocation::FullDepth], &cfg).unwrap();
        assert_eq!(step.loss, step.distortion + 3.0 * step.rate);
        let p = importance_forward(&net, &batch[0].input).unwrap();
        let expected_rate = crate::importance::rate_loss(p.values()).unwrap() / 2.0;
        assert!((step.rate - expected_rate).abs() < 1e-15);
        assert!(matches!(rd_evaluate(&model, &net, &[], &[], &cfg), Err(Error::Empty(_))));
    }

    #[test]
    fn full_depth_members_have_no_gradient() {
        let model = model_1d();
        let net = ImportanceNet::init(1, 3, 4);
        let batch = vec![TrainingPair::clean(seq(&[9.5, 8.4, 1.2]))];
        let step = rd_evaluate(&model, &net, &batch, &[Allocation::FullDepth], &TrainConfig::default()).unwrap();
        assert!(step.grad.iter().all(|&g| g == 0.0));
        assert_eq!(step.mean_depth, 3.0);
    }

    #[test]
    fn plan_respects_fraction() {
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = plan_batch(8, &cfg, &mut rng);
        assert_eq!(plan.iter().filter(|a| **a == Allocation::FullDepth).count(), 2);
        for a in plan {
            if let Allocation::Scaled(l) = a {
                assert!((0.8..=48.0).contains(&l));
            }
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let model = model_1d();
        let net = ImportanceNet::init(1, 3, 2);
        let data = vec![TrainingPair::clean(seq(&[1.0, 2.0]))];
        let cfg = TrainConfig {
            iterations: 0,
            ..TrainConfig::default()
        };
        let out = train_importance(&model, &net, &data, &cfg).unwrap();
        assert_eq!(out.net, net);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn divergence_is_reported() {
        let model = model_1d();
        let net = ImportanceNet::init(1, 3, 2);
        // Squared error of these features overflows to infinity.
        let data = vec![TrainingPair::clean(seq(&[9.5e200, 1.2, -4.4e200, 8.1]))];
        let cfg = TrainConfig {
            iterations: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_importance(&model, &net, &data, &cfg),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn trace_csv_header() {
        let rows = vec![TraceRow {
            iteration: 0,
            loss: 1.5,
            distortion: 0.75,
            rate: 0.25,
            mean_depth: 3.0,
        }];
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iteration,loss,distortion,rate,mean_depth\n0,1.5,0.75,0.25,3.0\n"
        );
    }
}
