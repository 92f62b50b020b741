//! Audio ingestion and the deterministic DSP front-end that produces the
//! `D x T` feature matrices every other module consumes.
//!
//! The front-end is: periodic Hann window, magnitude DFT, triangular mel
//! filterbank, `ln(eps + .)`, orthonormal DCT-II truncated to `D`
//! coefficients, then per-dimension standardization with frozen statistics.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, ByteReader};

/// Frames per second kept as an exact ratio (`sample_rate / hop`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRate {
    pub num: u32,
    pub den: u32,
}

impl FrameRate {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::config(format!("frame rate {num}/{den} must be positive")));
        }
        Ok(Self { num, den })
    }

    pub fn from_hop(sample_rate: u32, hop: usize) -> Result<Self> {
        let hop = u32::try_from(hop).map_err(|_| Error::config("hop does not fit in u32"))?;
        Self::new(sample_rate, hop)
    }

    pub fn hz(&self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }
}

impl Default for FrameRate {
    fn default() -> Self {
        Self { num: 16000, den: 512 }
    }
}

impl fmt::Display for FrameRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyAudio);
        }
        if sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }
}

fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Reads a RIFF/WAVE file (PCM 16-bit or IEEE float 32-bit). Multi-channel
/// files yield channel 0.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels.max(1));
    if channels > 1 {
        log::warn!(
            "{}: {} channels, keeping channel 0 only",
            path.display(),
            channels
        );
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!("{fmt:?} {bits}-bit")));
        }
    };
    let samples: Vec<f64> = interleaved.into_iter().step_by(channels).collect();
    AudioClip::new(samples, spec.sample_rate)
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &clip.samples {
        w.write_sample(s as f32)?;
    }
    w.finalize()?;
    Ok(())
}

/// Gain applied to `noise` so that `clean + gain * noise` has the requested SNR.
pub fn snr_gain(clean_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (clean_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Adds `noise` to `clean` at `snr_db`. The noise is read circularly from a
/// seed-selected offset so it always covers the clean clip.
pub fn mix_at_snr(clean: &AudioClip, noise: &AudioClip, snr_db: f64, seed: u64) -> Result<AudioClip> {
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::SampleRateMismatch(clean.sample_rate, noise.sample_rate));
    }
    if !snr_db.is_finite() {
        return Err(Error::NonFinite("snr"));
    }
    let clean_power = clean.power();
    if clean_power <= 0.0 {
        return Err(Error::SilentInput("clean"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.random_range(0..noise.len());
    let segment: Vec<f64> = (0..clean.len())
        .map(|i| noise.samples[(offset + i) % noise.len()])
        .collect();
    let noise_power = mean_power(&segment);
    if noise_power <= 0.0 {
        return Err(Error::SilentInput("noise"));
    }
    let gain = snr_gain(clean_power, noise_power, snr_db);
    let samples = clean
        .samples
        .iter()
        .zip(&segment)
        .map(|(c, n)| c + gain * n)
        .collect();
    AudioClip::new(samples, clean.sample_rate)
}

/// Per-dimension standardization `(x - mean) / scale`, fitted once on a
/// training split and then frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean and standard deviation per dimension over every frame of
    /// `sequences`. Dimensions with zero spread keep scale 1.
    pub fn fit(sequences: &[FeatureSequence]) -> Result<Self> {
        let first = sequences.first().ok_or(Error::Empty("training split"))?;
        let dim = first.dim();
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut count = 0usize;
        for seq in sequences {
            check_dim(dim, seq.dim())?;
            for frame in seq.frames() {
                for (d, &v) in frame.iter().enumerate() {
                    sum[d] += v;
                    sq[d] += v * v;
                }
                count += 1;
            }
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, seq: &mut FeatureSequence) -> Result<()> {
        check_dim(self.mean.len(), seq.dim())?;
        let dim = seq.dim();
        for (i, v) in seq.data.iter_mut().enumerate() {
            let d = i % dim;
            *v = (*v - self.mean[d]) / self.scale[d];
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub window_size: usize,
    pub hop: usize,
    pub mel_bins: usize,
    pub out_dim: usize,
    /// Floor inside the log compression.
    pub log_floor: f64,
    pub normalization: Normalization,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_size: 1024,
            hop: 512,
            mel_bins: 64,
            out_dim: 32,
            log_floor: 1e-5,
            normalization: Normalization::identity(32),
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 {
            return Err(Error::config("hop must be positive"));
        }
        if self.window_size < self.hop {
            return Err(Error::config("window_size must be >= hop"));
        }
        if self.out_dim == 0 || self.out_dim > self.mel_bins {
            return Err(Error::config("out_dim must be in [1, mel_bins]"));
        }
        if self.normalization.mean.len() != self.out_dim
            || self.normalization.scale.len() != self.out_dim
        {
            return Err(Error::config("normalization stats must have out_dim entries"));
        }
        if self.normalization.scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config("normalization scales must be positive"));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::config("log floor must be positive"));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        for v in [self.window_size, self.hop, self.mel_bins, self.out_dim] {
            bytes.extend_from_slice(&(v as u64).to_le_bytes());
        }
        bytes.extend_from_slice(&self.log_floor.to_le_bytes());
        for v in self.normalization.mean.iter().chain(&self.normalization.scale) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        io::fnv1a(&bytes)
    }

    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.window_size).then(|| (len - self.window_size) / self.hop + 1)
    }
}

/// A `D x T` real matrix stored column-major (one contiguous column per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    dim: usize,
    data: Vec<f64>,
    pub frame_rate: FrameRate,
    pub fingerprint: u64,
}

const VFEA_MAGIC: &[u8; 4] = b"VFEA";
const VFEA_VERSION: u8 = 1;

impl FeatureSequence {
    pub fn new(dim: usize, data: Vec<f64>, frame_rate: FrameRate) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("feature dimension must be positive"));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(Error::config(format!(
                "{} values do not form whole frames of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature values"));
        }
        Ok(Self {
            dim,
            data,
            frame_rate,
            fingerprint: 0,
        })
    }

    pub fn from_frames(frames: &[Vec<f64>], frame_rate: FrameRate) -> Result<Self> {
        let dim = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != dim) {
            return Err(Error::config("frames have unequal lengths"));
        }
        Self::new(dim, frames.concat(), frame_rate)
    }

    pub fn zeros(dim: usize, frames: usize, frame_rate: FrameRate) -> Self {
        assert!(dim > 0 && frames > 0);
        Self {
            dim,
            data: vec![0.0; dim * frames],
            frame_rate,
            fingerprint: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, d: usize, t: usize) -> f64 {
        self.data[t * self.dim + d]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(19 + 4 * self.data.len());
        out.extend_from_slice(VFEA_MAGIC);
        out.push(VFEA_VERSION);
        out.extend_from_slice(&(self.dim as u16).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.frame_rate.num.to_le_bytes());
        out.extend_from_slice(&self.frame_rate.den.to_le_bytes());
        io::put_f32s(&mut out, &self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(VFEA_MAGIC)?;
        let version = r.u8()?;
        if version != VFEA_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim = usize::from(r.u16()?);
        let frames = r.u32()? as usize;
        let rate = FrameRate::new(r.u32()?, r.u32()?)?;
        let data = r.f32s(dim * frames)?;
        r.finish()?;
        Self::new(dim, data, rate)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&io::read_file(path.as_ref())?)
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-style filters spanning 0 Hz to Nyquist, one row per band
/// over the `n_fft / 2 + 1` magnitude bins.
fn mel_filterbank(mel_bins: usize, n_fft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let nyquist = f64::from(sample_rate) / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..mel_bins + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (mel_bins + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * f64::from(sample_rate) / n_fft as f64;
    (0..mel_bins)
        .map(|m| {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = bin_hz(k);
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= center {
                        (f - lo) / (center - lo)
                    } else {
                        (hi - f) / (hi - center)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II basis, first `out_dim` rows.
fn dct_basis(out_dim: usize, n: usize) -> Vec<Vec<f64>> {
    (0..out_dim)
        .map(|k| {
            let norm = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            (0..n)
                .map(|i| norm * (PI * (i as f64 + 0.5) * k as f64 / n as f64).cos())
                .collect()
        })
        .collect()
}

pub fn extract_features(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureSequence> {
    cfg.validate()?;
    let frames = cfg.frame_count(clip.len()).ok_or(Error::ClipTooShort {
        len: clip.len(),
        window: cfg.window_size,
    })?;
    let n = cfg.window_size;
    // Periodic Hann.
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect();
    let filters = mel_filterbank(cfg.mel_bins, n, clip.sample_rate);
    let dct = dct_basis(cfg.out_dim, cfg.mel_bins);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);

    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(frames * cfg.out_dim);
    let mut log_mel = vec![0.0; cfg.mel_bins];
    for t in 0..frames {
        let start = t * cfg.hop;
        for (b, (&s, &w)) in buf
            .iter_mut()
            .zip(clip.samples[start..start + n].iter().zip(&window))
        {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (lm, filter) in log_mel.iter_mut().zip(&filters) {
            let energy: f64 = filter.iter().zip(&buf).map(|(w, c)| w * c.norm()).sum();
            *lm = (cfg.log_floor + energy).ln();
        }
        for (d, basis) in dct.iter().enumerate() {
            let coef: f64 = basis.iter().zip(&log_mel).map(|(b, v)| b * v).sum();
            let norm = &cfg.normalization;
            data.push((coef - norm.mean[d]) / norm.scale[d]);
        }
    }
    let mut seq = FeatureSequence::new(
        cfg.out_dim,
        data,
        FrameRate::from_hop(clip.sample_rate, cfg.hop)?,
    )?;
    seq.fingerprint = cfg.fingerprint();
    Ok(seq)
}

/// Frame classes of the synthetic feature generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameClass {
    /// All-zero clean frame.
    Silence,
    /// Scaled copy of one of a few fixed prototype vectors.
    Tonal,
    /// Dense Gaussian frame.
    Burst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub sequences: usize,
    pub frames: usize,
    pub dim: usize,
    pub silence: f64,
    pub tonal: f64,
    pub burst: f64,
    /// Peak level of tonal prototypes and standard deviation of burst frames.
    pub amplitude: f64,
    /// Standard deviation of the additive perturbation in the noisy copy.
    pub noise_level: f64,
    /// Frames are grouped into runs of this length before shuffling.
    pub run_length: usize,
    pub frame_rate: FrameRate,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            sequences: 16,
            frames: 64,
            dim: 8,
            silence: 0.5,
            tonal: 0.0,
            burst: 0.5,
            amplitude: 1.5,
            noise_level: 0.3,
            run_length: 4,
            frame_rate: FrameRate::default(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sequences == 0 || self.frames == 0 || self.dim == 0 || self.run_length == 0 {
            return Err(Error::config("synthetic counts must be positive"));
        }
        let parts = [self.silence, self.tonal, self.burst];
        if parts.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::config("class proportions must lie in [0, 1]"));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("class proportions must sum to 1"));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::config("amplitude must be positive"));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::config("noise level must be non-negative"));
        }
        Ok(())
    }

    /// Frame counts per class by largest remainder, so the proportions are
    /// met exactly whenever `frames * proportion` is an integer.
    fn class_counts(&self) -> [(FrameClass, usize); 3] {
        let classes = [
            (FrameClass::Silence, self.silence),
            (FrameClass::Tonal, self.tonal),
            (FrameClass::Burst, self.burst),
        ];
        let exact: Vec<f64> = classes.iter().map(|(_, p)| p * self.frames as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut left = self.frames - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in &order {
            if left == 0 {
                break;
            }
            if classes[i].1 > 0.0 {
                counts[i] += 1;
                left -= 1;
            }
        }
        [
            (classes[0].0, counts[0]),
            (classes[1].0, counts[1]),
            (classes[2].0, counts[2]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub clean: FeatureSequence,
    pub noisy: FeatureSequence,
    pub labels: Vec<FrameClass>,
}

const TONAL_PROTOTYPES: usize = 4;

/// Generates aligned clean/noisy feature pairs directly in the feature domain.
pub fn synth_feature_dataset(spec: &SynthSpec, seed: u64) -> Result<Vec<SyntheticPair>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f64>> = (0..TONAL_PROTOTYPES)
        .map(|j| {
            (0..spec.dim)
                .map(|d| {
                    let phase = PI * (j as f64 + 1.0) * (d as f64 + 0.5) / spec.dim as f64;
                    spec.amplitude * phase.cos()
                })
                .collect()
        })
        .collect();
    let counts = spec.class_counts();

    let mut out = Vec::with_capacity(spec.sequences);
    for _ in 0..spec.sequences {
        let mut labels: Vec<FrameClass> = counts
            .iter()
            .flat_map(|&(c, n)| std::iter::repeat_n(c, n))
            .collect();
        // Shuffle whole runs so classes stay temporally grouped.
        let mut runs: Vec<Vec<FrameClass>> =
            labels.chunks(spec.run_length).map(<[_]>::to_vec).collect();
        runs.shuffle(&mut rng);
        labels = runs.concat();

        let mut clean = Vec::with_capacity(spec.frames * spec.dim);
        for &label in &labels {
            match label {
                FrameClass::Silence => clean.extend(std::iter::repeat_n(0.0, spec.dim)),
                FrameClass::Tonal => {
                    let proto = &prototypes[rng.random_range(0..TONAL_PROTOTYPES)];
                    let gain = rng.random_range(0.8..1.2);
                    clean.extend(proto.iter().map(|v| gain * v));
                }
                FrameClass::Burst => {
                    clean.extend((0..spec.dim).map(|_| spec.amplitude * gaussian(&mut rng)));
                }
            }
        }
        let noisy: Vec<f64> = clean
            .iter()
            .map(|&v| {
                if spec.noise_level > 0.0 {
                    v + spec.noise_level * gaussian(&mut rng)
                } else {
                    v
                }
            })
            .collect();
        out.push(SyntheticPair {
            clean: FeatureSequence::new(spec.dim, clean, spec.frame_rate)?,
            noisy: FeatureSequence::new(spec.dim, noisy, spec.frame_rate)?,
            labels,
        });
    }
    Ok(out)
}

/// Standard normal draw (Box-Muller).
pub(crate) fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}
