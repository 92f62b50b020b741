//! Trains codebooks and an importance net on synthetic features where half
//! the frames are silent, then compares the VBR and CBR rate-distortion
//! curves of the same codebooks by BD-rate.
//!
//! cargo run --release --example cbr_vs_vbr -- [seed] [iterations]

use vrvq::eval::{bd_rate, Metric};
use vrvq::features::{FrameClass, SyntheticPair};
use vrvq::vrvq::{rd_curves, sweep_curves, TrainingMode, DEFAULT_SCALES};
use vrvq::{
    synth_feature_dataset, train_codebooks, train_importance, vrvq_encode, ImportanceNet, KMeansConfig, SynthSpec,
    TrainConfig, TrainingPair,
};

fn to_pairs(data: &[SyntheticPair]) -> Vec<TrainingPair> {
    data.iter()
        .map(|p| TrainingPair::from_synthetic(p, TrainingMode::CleanReconstruction))
        .collect()
}

fn main() -> vrvq::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let iterations: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);

    let spec = SynthSpec {
        sequences: 48,
        dim: 32,
        amplitude: 5.0,
        run_length: 16,
        ..SynthSpec::default()
    };
    let train = synth_feature_dataset(&spec, seed)?;
    let test = synth_feature_dataset(&SynthSpec { sequences: 8, ..spec.clone() }, seed + 1000)?;
    let clean: Vec<_> = train.iter().map(|p| p.clean.clone()).collect();
    let model = train_codebooks(&clean, 8, 6, &KMeansConfig::default(), seed)?.model;

    let cfg = TrainConfig {
        iterations,
        batch_size: 16,
        step_size: 1e-3,
        seed,
        ..TrainConfig::default()
    };
    let net = ImportanceNet::init(spec.dim, 8, seed);
    let trained = train_importance(&model, &net, &to_pairs(&train), &cfg)?;

    // Where the bits go at the largest scale.
    let mut hist = [[0usize; 8]; 2];
    for pair in &test {
        let enc = vrvq_encode(&model, &trained.net, &pair.clean, 48.0)?;
        for (label, depth) in pair.labels.iter().zip(&enc.depths) {
            hist[usize::from(*label == FrameClass::Burst)][depth - 1] += 1;
        }
    }
    println!("depth histogram at l = 48");
    println!("  silence {:?}", hist[0]);
    println!("  burst   {:?}", hist[1]);

    let depths: Vec<usize> = (1..=8).collect();
    let points = sweep_curves(&model, &trained.net, &to_pairs(&test), &DEFAULT_SCALES, &depths, 1)?;
    for p in &points {
        println!(
            "{} {:>5}: {:.4} kbps, mean depth {:.2}, SI-SDR {:.2} dB",
            p.mode.label(),
            p.setting,
            p.bitrate_kbps,
            p.mean_depth,
            p.metrics.si_sdr
        );
    }
    let (cbr, vbr) = rd_curves(&points, Metric::SiSdr, true, 8)?;
    let report = bd_rate(&cbr.pareto_envelope(), &vbr.pareto_envelope())?;
    println!("BD-rate of VBR against CBR: {:.2}%", report.bd_rate_percent);
    Ok(())
}
