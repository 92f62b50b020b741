//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.
//!
//! cargo test --release --test acceptance

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vrvq::bitstream::{depth_bits, StreamMode};
use vrvq::denoiser::{learnable_sigmoid_grad, mean_guidance_loss};
use vrvq::features::{FrameClass, SyntheticPair};
use vrvq::importance::{depth_for, surrogate};
use vrvq::rvq::{quantization_error, CodeMatrix};
use vrvq::vrvq::{rd_curves, rd_evaluate, sweep_curves, Allocation, MaskForward, TrainingMode, DEFAULT_SCALES};
use vrvq::{
    bd_rate, denoise_forward, i2m_hard, i2m_ste, kmeans, learnable_sigmoid, measure_bitrate,
    pack, si_sdr, surrogate_eval, synth_feature_dataset, train_codebooks, train_importance,
    two_stage_train, unpack, DenoiseTrainConfig, EncodingMode, FeatureMasker, FeatureSequence, FrameRate,
    ImportanceNet, KMeansConfig, Metric, RdCurve, RdPoint, StreamParams, SynthSpec, TrainConfig,
    TrainingPair, VrvqEncoding,
};

mod common;

use common::soft_forward_loss;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn surrogate_correctness() -> Outcome {
    let n_q = 8usize;
    let mut worst_fd = 0.0f64;
    for alpha in [0.5, 2.0, 8.0] {
        for k in 0..n_q {
            let mid = surrogate_eval(k as f64 + 0.5, k, alpha).0;
            ensure!((mid - 0.5).abs() <= 1e-12, "f(k + 0.5) = {mid} for k = {k}, alpha = {alpha}");

            let lo = -5.0;
            let hi = n_q as f64 + 5.0;
            let n = 10_000;
            let mut prev: Option<(f64, vrvq::importance::SoftStep)> = None;
            for i in 0..n {
                let s = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                let r = surrogate(s, k, alpha);
                // Above the midpoint `value` may round to 1; containment is
                // checked on the complement there.
                let inside = r.value > 0.0 && r.complement > 0.0 && (r.value < 1.0 || s > k as f64 + 0.5);
                ensure!(
                    inside,
                    "f({s}) = {} (1 - f = {}) outside (0, 1) for k = {k}, alpha = {alpha}",
                    r.value,
                    r.complement
                );
                if let Some((ps, p)) = prev {
                    // Below the midpoint the value carries the precision,
                    // above it the complement does.
                    let increasing = if s <= k as f64 + 0.5 {
                        r.value > p.value
                    } else {
                        r.complement < p.complement
                    };
                    ensure!(increasing, "not strictly increasing between {ps} and {s} (k = {k}, alpha = {alpha})");
                }
                prev = Some((s, r));

                if i % 10 == 0 {
                    let h = 1e-5;
                    let fd = if s <= k as f64 + 0.5 {
                        (surrogate(s + h, k, alpha).value - surrogate(s - h, k, alpha).value) / (2.0 * h)
                    } else {
                        (surrogate(s - h, k, alpha).complement - surrogate(s + h, k, alpha).complement) / (2.0 * h)
                    };
                    let e = rel_err(r.derivative, fd);
                    worst_fd = worst_fd.max(e);
                    ensure!(e < 1e-6, "f'({s}) = {} vs FD {fd} (k = {k}, alpha = {alpha})", r.derivative);
                }
            }
        }
    }
    Ok(format!("worst derivative rel. error {worst_fd:.2e}"))
}

fn straight_through_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100_000 {
        let p: f64 = rng.random_range(1e-6..1.0);
        let l: f64 = rng.random_range(0.8..48.0);
        let n_q: usize = rng.random_range(1..=16);
        let alpha: f64 = rng.random_range(0.5..8.0);
        let hard = i2m_hard(p, l, n_q);
        let (fwd, sens) = i2m_ste(p, l, alpha, n_q);
        ensure!(fwd == hard, "STE forward differs from hard mask at p = {p}, l = {l}");
        ensure!(hard.windows(2).all(|w| w[0] >= w[1]), "mask {hard:?} is not a prefix");
        let ones = hard.iter().filter(|&&m| m == 1).count();
        ensure!(ones >= 1 && depth_for(p, l, n_q) == ones, "depth {ones} for p = {p}, l = {l}");
        ensure!(sens.iter().all(|s| *s >= 0.0 && s.is_finite()), "bad sensitivity {sens:?}");
    }
    Ok("100000 draws".into())
}

fn rd_gradient() -> Outcome {
    let spec = SynthSpec {
        sequences: 8,
        frames: 16,
        dim: 8,
        ..SynthSpec::default()
    };
    let data = synth_feature_dataset(&spec, 5).map_err(|e| e.to_string())?;
    let clean: Vec<_> = data.iter().map(|p| p.clean.clone()).collect();
    let model = train_codebooks(&clean, 4, 4, &KMeansConfig::default(), 5).map_err(|e| e.to_string())?.model;
    let batch: Vec<TrainingPair> = data[..4]
        .iter()
        .map(|p| TrainingPair::from_synthetic(p, TrainingMode::SimpleMapping))
        .collect();
    let plan = [
        Allocation::Scaled(2.0),
        Allocation::Scaled(5.0),
        Allocation::FullDepth,
        Allocation::Scaled(7.0),
    ];
    let cfg = TrainConfig {
        mask_forward: MaskForward::Soft,
        ..TrainConfig::default()
    };
    let net = ImportanceNet::init(8, 8, 5);
    let step = rd_evaluate(&model, &net, &batch, &plan, &cfg).map_err(|e| e.to_string())?;
    let oracle = soft_forward_loss(&model, &net, &batch, &plan, cfg.alpha, cfg.lambda_rate);
    ensure!(rel_err(step.loss, oracle) < 1e-12, "loss {} vs oracle {oracle}", step.loss);

    let h = 1e-6;
    let mut diff = 0.0;
    let mut norm = 0.0;
    for i in 0..net.params().len() {
        let mut plus = net.clone();
        plus.params_mut()[i] += h;
        let mut minus = net.clone();
        minus.params_mut()[i] -= h;
        let fd = (soft_forward_loss(&model, &plus, &batch, &plan, cfg.alpha, cfg.lambda_rate)
            - soft_forward_loss(&model, &minus, &batch, &plan, cfg.alpha, cfg.lambda_rate))
            / (2.0 * h);
        diff += (step.grad[i] - fd).powi(2);
        norm += fd * fd;
    }
    let rel = (diff / norm).sqrt();
    ensure!(rel < 1e-4, "gradient rel. error {rel:.3e}");
    Ok(format!("{} parameters, rel. error {rel:.2e}", net.params().len()))
}

fn bitstream() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n_q = 8usize;
    let code_bits = 10u8;
    for trial in 0..1000 {
        let frames: usize = rng.random_range(1..200);
        let vbr = trial % 2 == 0;
        let fixed: usize = rng.random_range(1..=n_q);
        let depths: Vec<usize> = (0..frames)
            .map(|_| if vbr { rng.random_range(1..=n_q) } else { fixed })
            .collect();
        let indices: Vec<u32> = (0..frames * n_q).map(|_| rng.random_range(0..1u32 << code_bits)).collect();
        let enc = VrvqEncoding {
            codes: CodeMatrix::new(n_q, indices).map_err(|e| e.to_string())?,
            depths: depths.clone(),
            mode: if vbr {
                EncodingMode::Vbr { scale: 1.0 }
            } else {
                EncodingMode::Cbr { depth: fixed }
            },
            importance: None,
            frame_rate: FrameRate::default(),
        };
        let params = StreamParams {
            stages: n_q as u8,
            code_bits,
            dim: 32,
            frame_rate: FrameRate::default(),
            model_fingerprint: rng.random(),
        };
        let stream = pack(&enc, &params).map_err(|e| e.to_string())?;
        let expected: u64 = depths
            .iter()
            .map(|&n| if vbr { 3 } else { 0 } + 10 * n as u64)
            .sum();
        ensure!(stream.payload_bits == expected, "payload {} bits, expected {expected}", stream.payload_bits);
        let back = unpack(&stream.to_bytes()).map_err(|e| e.to_string())?;
        ensure!(back.header == stream.header, "header differs on trial {trial}");
        ensure!(back.depths == depths, "depths differ on trial {trial}");
        for (t, codes) in back.codes.iter().enumerate() {
            ensure!(codes[..] == enc.codes.frame(t)[..depths[t]], "codes differ at frame {t}");
        }
        ensure!(
            matches!(back.header.mode, StreamMode::Vbr) == vbr,
            "mode lost on trial {trial}"
        );
    }
    ensure!(depth_bits(n_q) == 3, "side info width {}", depth_bits(n_q));

    let side_info = |sample_rate| -> Result<f64, String> {
        let rate = FrameRate::from_hop(sample_rate, 512).map_err(|e| e.to_string())?;
        let enc = VrvqEncoding {
            codes: CodeMatrix::new(n_q, vec![0; 10 * n_q]).map_err(|e| e.to_string())?,
            depths: vec![1; 10],
            mode: EncodingMode::Vbr { scale: 1.0 },
            importance: None,
            frame_rate: rate,
        };
        let params = StreamParams {
            stages: n_q as u8,
            code_bits,
            dim: 32,
            frame_rate: rate,
            model_fingerprint: 0,
        };
        Ok(measure_bitrate(&pack(&enc, &params).map_err(|e| e.to_string())?).side_info_kbps)
    };
    let at16 = side_info(16_000)?;
    let at48 = side_info(48_000)?;
    ensure!((at16 - 0.09375).abs() < 1e-12, "16 kHz side info {at16}");
    ensure!((at48 - 0.281).abs() < 5e-4, "48 kHz side info {at48}");
    Ok(format!(
        "1000 round trips; side info {at16} kbps at 16 kHz (published 0.093), {at48} kbps at 48 kHz (published 0.279, from a 93 Hz frame rate)"
    ))
}

fn analytic_curve(label: &str, rate_factor: f64) -> RdCurve {
    let points = [0.5, 1.0, 1.5, 2.0, 3.0]
        .iter()
        .map(|&kbps: &f64| RdPoint {
            bitrate_kbps: kbps * rate_factor,
            quality: 8.0 * kbps.ln() + 12.0,
            label: label.into(),
        })
        .collect();
    RdCurve::new(label, "si_sdr", points).unwrap()
}

fn random_curve(rng: &mut impl Rng, label: &str) -> RdCurve {
    let n: usize = rng.random_range(3..7);
    let mut rate = rng.random_range(0.2..1.0);
    let mut quality = rng.random_range(-2.0..0.0);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push(RdPoint {
            bitrate_kbps: rate,
            quality,
            label: label.into(),
        });
        rate += rng.random_range(0.1..2.0);
        quality += rng.random_range(1.0..6.0);
    }
    RdCurve::new(label, "si_sdr", points).unwrap()
}

fn bd_rate_oracle() -> Outcome {
    let reference = analytic_curve("ref", 1.0);
    let same = bd_rate(&reference, &analytic_curve("same", 1.0)).map_err(|e| e.to_string())?;
    ensure!(same.bd_rate_percent.abs() < 1e-9, "identical curves give {}", same.bd_rate_percent);
    let double = bd_rate(&reference, &analytic_curve("double", 2.0)).map_err(|e| e.to_string())?;
    ensure!((double.bd_rate_percent - 100.0).abs() < 0.1, "doubled rate gives {}", double.bd_rate_percent);
    let half = bd_rate(&reference, &analytic_curve("half", 0.5)).map_err(|e| e.to_string())?;
    ensure!((half.bd_rate_percent + 50.0).abs() < 0.1, "halved rate gives {}", half.bd_rate_percent);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a = random_curve(&mut rng, "a");
        let b = random_curve(&mut rng, "b");
        let ab = bd_rate(&a, &b).map_err(|e| e.to_string())?.bd_rate_percent;
        let ba = bd_rate(&b, &a).map_err(|e| e.to_string())?.bd_rate_percent;
        let dev = ((1.0 + ab / 100.0) * (1.0 + ba / 100.0) - 1.0).abs();
        worst = worst.max(dev);
        ensure!(dev < 1e-9, "antisymmetry off by {dev} ({ab}, {ba})");
    }
    Ok(format!(
        "double {:+.6}%, half {:+.6}%, worst antisymmetry {worst:.1e}",
        double.bd_rate_percent, half.bd_rate_percent
    ))
}

fn kmeans_cascade() -> Outcome {
    let spec = SynthSpec {
        sequences: 32,
        tonal: 0.2,
        silence: 0.3,
        ..SynthSpec::default()
    };
    let data = synth_feature_dataset(&spec, 6).map_err(|e| e.to_string())?;
    let clean: Vec<FeatureSequence> = data.iter().map(|p| p.clean.clone()).collect();
    let fit = train_codebooks(&clean, 8, 6, &KMeansConfig::default(), 6).map_err(|e| e.to_string())?;
    for (stage, trace) in fit.objectives.iter().enumerate() {
        ensure!(
            trace.windows(2).all(|w| w[1] <= w[0]),
            "stage {} objective increases: {trace:?}",
            stage + 1
        );
    }
    let mut errors = Vec::new();
    for depth in 1..=8 {
        let mut total = 0.0;
        for z in &clean {
            total += quantization_error(&fit.model, z, depth).map_err(|e| e.to_string())?;
        }
        errors.push(total / clean.len() as f64);
    }
    ensure!(errors.windows(2).all(|w| w[1] <= w[0]), "error not monotone in depth: {errors:?}");

    let centers = [[1.5, -2.0, 0.25], [-3.0, 0.5, 4.0], [0.0, 0.0, 0.0], [2.0, 2.0, -1.0]];
    let points: Vec<Vec<f64>> = (0..40).map(|i| centers[i % 4].to_vec()).collect();
    let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let toy = kmeans(&refs, 4, &KMeansConfig::default(), &mut rng).map_err(|e| e.to_string())?;
    let last = *toy.objective.last().unwrap_or(&f64::NAN);
    ensure!(last == 0.0, "toy objective {last}");
    for c in &centers {
        ensure!(toy.centroids.iter().any(|r| r[..] == c[..]), "centroid {c:?} not recovered");
    }
    Ok(format!("depth-1 error {:.4}, depth-8 error {:.5}", errors[0], errors[7]))
}

fn to_pairs(data: &[SyntheticPair], mode: TrainingMode) -> Vec<TrainingPair> {
    data.iter().map(|p| TrainingPair::from_synthetic(p, mode)).collect()
}

/// BD-rate of VBR against CBR for one seed of the half-silent dataset.
fn vrvq_bd_rate(seed: u64) -> Result<(f64, [f64; 2]), String> {
    let spec = SynthSpec {
        sequences: 48,
        dim: 32,
        amplitude: 5.0,
        run_length: 16,
        ..SynthSpec::default()
    };
    let train = synth_feature_dataset(&spec, seed).map_err(|e| e.to_string())?;
    let test = synth_feature_dataset(&SynthSpec { sequences: 8, ..spec.clone() }, seed + 1000)
        .map_err(|e| e.to_string())?;
    let clean: Vec<_> = train.iter().map(|p| p.clean.clone()).collect();
    let model = train_codebooks(&clean, 8, 6, &KMeansConfig::default(), seed).map_err(|e| e.to_string())?.model;
    let cfg = TrainConfig {
        iterations: 2000,
        batch_size: 16,
        step_size: 1e-3,
        seed,
        ..TrainConfig::default()
    };
    let net = ImportanceNet::init(spec.dim, 8, seed);
    let trained = train_importance(&model, &net, &to_pairs(&train, TrainingMode::CleanReconstruction), &cfg)
        .map_err(|e| e.to_string())?;

    let mut depth_by_class = [(0.0, 0usize); 2];
    for pair in &test {
        let enc = vrvq::vrvq_encode(&model, &trained.net, &pair.clean, 48.0).map_err(|e| e.to_string())?;
        for (label, d) in pair.labels.iter().zip(&enc.depths) {
            let slot = &mut depth_by_class[usize::from(*label == FrameClass::Burst)];
            slot.0 += *d as f64;
            slot.1 += 1;
        }
    }
    let depths: Vec<usize> = (1..=8).collect();
    let eval_set = to_pairs(&test, TrainingMode::CleanReconstruction);
    let points = sweep_curves(&model, &trained.net, &eval_set, &DEFAULT_SCALES, &depths, 1)
        .map_err(|e| e.to_string())?;
    let (cbr, vbr) = rd_curves(&points, Metric::SiSdr, true, 8).map_err(|e| e.to_string())?;
    let report = bd_rate(&cbr.pareto_envelope(), &vbr.pareto_envelope()).map_err(|e| e.to_string())?;
    Ok((
        report.bd_rate_percent,
        [
            depth_by_class[0].0 / depth_by_class[0].1 as f64,
            depth_by_class[1].0 / depth_by_class[1].1 as f64,
        ],
    ))
}

fn vrvq_efficiency() -> Outcome {
    let mut rates = Vec::new();
    let mut detail = Vec::new();
    for seed in 0..3 {
        let (bd, [silence, burst]) = vrvq_bd_rate(seed)?;
        detail.push(format!("seed {seed}: {bd:+.2}% (mean depth silence {silence:.2}, burst {burst:.2})"));
        rates.push(bd);
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    ensure!(mean < 0.0, "mean BD-rate {mean:+.2}%; {}", detail.join("; "));
    Ok(format!("mean BD-rate {mean:+.2}%; {}", detail.join("; ")))
}

fn denoiser() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let x: f64 = rng.random_range(-4.0..4.0);
        let beta: f64 = rng.random_range(0.25..3.0);
        let (dx, dbeta) = learnable_sigmoid_grad(x, beta);
        let h = 1e-3;
        let five_point = |f: &dyn Fn(f64) -> f64, v: f64| {
            (f(v - 2.0 * h) - 8.0 * f(v - h) + 8.0 * f(v + h) - f(v + 2.0 * h)) / (12.0 * h)
        };
        let fd_x = five_point(&|v| learnable_sigmoid(v, beta), x);
        let fd_beta = five_point(&|b| learnable_sigmoid(x, b), beta);
        let e = rel_err(dx, fd_x).max(if dbeta.abs() > 1e-3 { rel_err(dbeta, fd_beta) } else { 0.0 });
        worst = worst.max(e);
        ensure!(e < 1e-8, "sigmoid derivative at x = {x}, beta = {beta}: rel. error {e:.2e}");
    }

    let mut detail = Vec::new();
    for seed in 0..3u64 {
        let spec = SynthSpec::default();
        let train = synth_feature_dataset(&spec, seed).map_err(|e| e.to_string())?;
        let held_out = synth_feature_dataset(&SynthSpec { sequences: 8, ..spec.clone() }, seed + 1000)
            .map_err(|e| e.to_string())?;
        let clean: Vec<_> = train.iter().map(|p| p.clean.clone()).collect();
        let model = train_codebooks(&clean, 8, 4, &KMeansConfig::default(), seed).map_err(|e| e.to_string())?.model;
        let net = ImportanceNet::init(spec.dim, 16, seed);
        let masker = FeatureMasker::init(spec.dim, 16, seed + 1);
        let cfg = DenoiseTrainConfig {
            pretrain_iterations: 300,
            finetune_iterations: 600,
            base: TrainConfig {
                seed,
                step_size: 5e-2,
                ..TrainConfig::default()
            },
            ..DenoiseTrainConfig::default()
        };
        let paired = to_pairs(&train, TrainingMode::SimpleMapping);
        let out = two_stage_train(&model, &net, &masker, &clean, &paired, &cfg).map_err(|e| e.to_string())?;
        let test_pairs = to_pairs(&held_out, TrainingMode::SimpleMapping);
        let before = mean_guidance_loss(&masker, &test_pairs).map_err(|e| e.to_string())?;
        let after = mean_guidance_loss(&out.masker, &test_pairs).map_err(|e| e.to_string())?;
        ensure!(after < before, "seed {seed}: held-out L_F {before} -> {after}");
        for pair in test_pairs.iter().chain(&paired) {
            for m in [&masker, &out.masker] {
                let (z_hat, _) = denoise_forward(m, &pair.input).map_err(|e| e.to_string())?;
                let amplified = z_hat
                    .as_slice()
                    .iter()
                    .zip(pair.input.as_slice())
                    .any(|(a, b)| a.abs() > b.abs());
                ensure!(!amplified, "masking amplified a feature on seed {seed}");
            }
        }
        detail.push(format!("seed {seed}: {before:.4} -> {after:.4}"));
    }
    Ok(format!("held-out L_F {}; sigmoid worst rel. error {worst:.1e}", detail.join(", ")))
}

fn si_sdr_checks() -> Outcome {
    let hand = si_sdr(&[1.0, 0.0], &[1.0, 1.0]).map_err(|e| e.to_string())?;
    ensure!(hand.abs() < 1e-12, "hand example gives {hand} dB");
    let reference = [0.3, -1.2, 2.5, 0.7, -0.1];
    let estimate = [0.25, -1.0, 2.9, 0.4, 0.2];
    let base = si_sdr(&reference, &estimate).map_err(|e| e.to_string())?;
    for c in [1e-3, 0.5, 2.0, 37.0] {
        let scaled: Vec<f64> = estimate.iter().map(|v| c * v).collect();
        let v = si_sdr(&reference, &scaled).map_err(|e| e.to_string())?;
        ensure!(rel_err(v, base) < 1e-12, "scale {c}: {v} vs {base}");
    }
    let exact = si_sdr(&reference, &reference).map_err(|e| e.to_string())?;
    ensure!(exact == f64::INFINITY, "zero error gives {exact}");
    let scaled_exact: Vec<f64> = reference.iter().map(|v| 3.0 * v).collect();
    let s = si_sdr(&reference, &scaled_exact).map_err(|e| e.to_string())?;
    ensure!(s == f64::INFINITY, "scaled copy gives {s}");
    Ok(format!("{base:.4} dB at every scale"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("surrogate correctness", surrogate_correctness),
        ("straight-through contract", straight_through_contract),
        ("rate-distortion gradient", rd_gradient),
        ("bitstream", bitstream),
        ("BD-rate oracle", bd_rate_oracle),
        ("k-means cascade", kmeans_cascade),
        ("VRVQ efficiency", vrvq_efficiency),
        ("denoiser", denoiser),
        ("SI-SDR", si_sdr_checks),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name} ({secs:.2} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name} ({secs:.2} s): {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
