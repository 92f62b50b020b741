//! Variable-bitrate residual vector quantization of audio feature sequences.
//!
//! The pipeline runs from audio (or synthetic features) through a DSP
//! front-end, a residual quantizer cascade trained with k-means, a per-frame
//! importance network that decides how many stages each frame spends, an
//! optional feature denoiser, a bit-exact stream format and rate-distortion
//! evaluation with Bjøntegaard-delta rates.
//!
//! ```
//! use vrvq::{cbr_encode, synth_feature_dataset, train_codebooks, KMeansConfig, SynthSpec};
//!
//! let data = synth_feature_dataset(&SynthSpec { sequences: 4, frames: 32, dim: 4, ..SynthSpec::default() }, 0)?;
//! let clean: Vec<_> = data.iter().map(|p| p.clean.clone()).collect();
//! let model = train_codebooks(&clean, 4, 3, &KMeansConfig::default(), 0)?.model;
//! let enc = cbr_encode(&model, &clean[0], 2)?;
//! assert_eq!(enc.reconstruct(&model)?.len(), 32);
//! # Ok::<(), vrvq::Error>(())
//! ```

pub mod bitstream;
pub mod cli;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod features;
pub mod importance;
pub mod io;
pub mod rvq;
pub mod vrvq;

pub use bitstream::{measure_bitrate, pack, unpack, Bitrate, EncodedStream, StreamHeader, StreamMode, StreamParams};
pub use denoiser::{
    denoise_forward, feature_guidance_loss, learnable_sigmoid, two_stage_train, DenoiseTrainConfig, FeatureMasker,
};
pub use error::{Error, Result};
pub use eval::{bd_rate, distortion_metrics, si_sdr, BdRateReport, DistortionMetrics, Metric, RdCurve, RdPoint};
pub use features::{
    extract_features, load_wav, mix_at_snr, synth_feature_dataset, AudioClip, FeatureConfig, FeatureSequence,
    FrameRate, SynthSpec,
};
pub use importance::{i2m_hard, i2m_ste, importance_forward, surrogate_eval, ImportanceMap, ImportanceNet};
pub use rvq::{kmeans, rvq_decode, rvq_encode, train_codebooks, Codebook, CodeMatrix, KMeansConfig, RvqModel};
pub use vrvq::{
    cbr_encode, rd_step, sweep_curves, train_importance, vrvq_encode, EncodingMode, TrainConfig, TrainingPair,
    VrvqEncoding,
};
