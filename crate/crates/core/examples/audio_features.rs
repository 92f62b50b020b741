//! Mixes a synthetic noise recording into a tone at 5 dB SNR and extracts
//! log-mel cepstral features from both.
//!
//! cargo run --example audio_features

use std::f64::consts::PI;

use vrvq::features::write_wav;
use vrvq::{extract_features, load_wav, mix_at_snr, AudioClip, FeatureConfig};

fn main() -> vrvq::Result<()> {
    let sr = 16000;
    let tone: Vec<f64> = (0..2 * sr)
        .map(|i| 0.4 * (2.0 * PI * 220.0 * i as f64 / f64::from(sr)).sin())
        .collect();
    let hiss: Vec<f64> = (0..sr).map(|i| ((i * 7919 % 1000) as f64 / 500.0 - 1.0) * 0.2).collect();

    let dir = std::env::temp_dir().join("vrvq_audio_features");
    std::fs::create_dir_all(&dir).map_err(vrvq::Error::RawIo)?;
    let clean_path = dir.join("clean.wav");
    write_wav(&clean_path, &AudioClip::new(tone, sr)?)?;
    let clean = load_wav(&clean_path)?;
    let noise = AudioClip::new(hiss, sr)?;

    let noisy = mix_at_snr(&clean, &noise, 5.0, 0)?;
    let residual: Vec<f64> = noisy.samples.iter().zip(&clean.samples).map(|(a, b)| a - b).collect();
    let realized = 10.0 * (clean.power() / AudioClip::new(residual, sr)?.power()).log10();
    println!("realized SNR {realized:.6} dB");

    let cfg = FeatureConfig::default();
    let z_clean = extract_features(&clean, &cfg)?;
    let z_noisy = extract_features(&noisy, &cfg)?;
    println!(
        "{} frames x {} coefficients at {} ({:.2} Hz)",
        z_clean.len(),
        z_clean.dim(),
        z_clean.frame_rate,
        z_clean.frame_rate.hz()
    );
    let diff = vrvq::distortion_metrics(&z_clean, &z_noisy)?;
    println!("feature MSE between clean and noisy: {:.4}", diff.mse);
    Ok(())
}
