//! Pretrains the importance net on clean features, then fine-tunes it
//! together with the feature masker on noisy/clean pairs, and reports the
//! guidance loss on held-out pairs before and after.
//!
//! cargo run --release --example feature_denoising -- [seed]

use vrvq::denoiser::mean_guidance_loss;
use vrvq::vrvq::TrainingMode;
use vrvq::{
    synth_feature_dataset, train_codebooks, two_stage_train, DenoiseTrainConfig, FeatureMasker, ImportanceNet,
    KMeansConfig, SynthSpec, TrainConfig, TrainingPair,
};

fn main() -> vrvq::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let spec = SynthSpec::default();
    let train = synth_feature_dataset(&spec, seed)?;
    let held_out = synth_feature_dataset(&SynthSpec { sequences: 8, ..spec.clone() }, seed + 1000)?;
    let clean: Vec<_> = train.iter().map(|p| p.clean.clone()).collect();
    let model = train_codebooks(&clean, 8, 4, &KMeansConfig::default(), seed)?.model;
    let pairs = |data: &[vrvq::features::SyntheticPair]| -> Vec<TrainingPair> {
        data.iter()
            .map(|p| TrainingPair::from_synthetic(p, TrainingMode::SimpleMapping))
            .collect()
    };

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
    let out = two_stage_train(&model, &net, &masker, &clean, &pairs(&train), &cfg)?;
    let before = mean_guidance_loss(&masker, &pairs(&held_out))?;
    let after = mean_guidance_loss(&out.masker, &pairs(&held_out))?;
    println!("held-out guidance loss: untrained {before:.4}, fine-tuned {after:.4}");
    println!("learned sigmoid slope {:.3}", out.masker.beta());
    if let (Some(first), Some(last)) = (out.finetune_trace.first(), out.finetune_trace.last()) {
        println!("fine-tuning loss {:.4} -> {:.4}", first.loss, last.loss);
    }
    Ok(())
}
