//! Fits an eight-stage residual cascade with k-means and prints the Lloyd
//! objective of each stage and the reconstruction error per depth.
//!
//! cargo run --release --example codebook_training

use vrvq::rvq::quantization_error;
use vrvq::{synth_feature_dataset, train_codebooks, KMeansConfig, SynthSpec};

fn main() -> vrvq::Result<()> {
    let data = synth_feature_dataset(&SynthSpec { sequences: 32, ..SynthSpec::default() }, 1)?;
    let clean: Vec<_> = data.iter().map(|p| p.clean.clone()).collect();
    let fit = train_codebooks(&clean, 8, 5, &KMeansConfig::default(), 1)?;
    for (stage, trace) in fit.objectives.iter().enumerate() {
        println!(
            "stage {}: {} Lloyd iterations, objective {:.4} -> {:.4}",
            stage + 1,
            trace.len(),
            trace[0],
            trace[trace.len() - 1]
        );
    }
    for depth in 1..=fit.model.stages() {
        let err: f64 = clean
            .iter()
            .map(|z| quantization_error(&fit.model, z, depth))
            .sum::<vrvq::Result<f64>>()?
            / clean.len() as f64;
        println!("depth {depth}: training MSE {err:.5}");
    }
    Ok(())
}
