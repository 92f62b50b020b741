//! Command-line front end.
//!
//! Every subcommand reads and writes the file formats of the library
//! modules. Flags may also come from a `key = value` file given with
//! `--config`; flags on the command line take precedence.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bitstream::{self, StreamParams};
use crate::denoiser::{self, DenoiseTrainConfig, FeatureMasker};
use crate::error::{Error, Result};
use crate::eval::{self, Metric, RdCurve, RdPoint};
use crate::features::{self, FeatureConfig, FeatureSequence, Normalization, SynthSpec};
use crate::importance::{ImportanceNet, ScaleDistribution};
use crate::rvq::{self, KMeansConfig, RvqModel};
use crate::vrvq::{self, TrainConfig, TrainingPair, DEFAULT_SCALES};

#[derive(Debug, Parser)]
#[command(name = "vrvq", version, about = "Variable-bitrate residual vector quantization toolkit")]
#[command(args_override_self = true)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for batch evaluation and sweeps.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,
    /// File of `key = value` lines supplying default flag values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mix a noise recording into a clean one at a target SNR.
    Mix(MixArgs),
    /// Extract a feature sequence from a WAV file.
    Features(FeaturesArgs),
    /// Write a synthetic paired clean/noisy feature dataset.
    Synth(SynthArgs),
    /// Fit the residual codebooks with k-means.
    TrainCodebooks(TrainCodebooksArgs),
    /// Train the importance network against frozen codebooks.
    TrainImportance(TrainImportanceArgs),
    /// Pretrain on clean data, then fine-tune with the feature denoiser.
    FinetuneDenoiser(FinetuneArgs),
    /// Encode a feature sequence into a bitstream.
    Encode(EncodeArgs),
    /// Decode a bitstream back into features.
    Decode(DecodeArgs),
    /// Sweep VBR scales and CBR depths and write RD curves as CSV.
    Sweep(SweepArgs),
    /// Compute the BD-rate between two RD curves.
    Bdrate(BdrateArgs),
    /// Export the per-frame importance map and depths as CSV.
    Impmap(ImpmapArgs),
}

#[derive(Debug, Args)]
struct MixArgs {
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    noise: PathBuf,
    /// Target signal-to-noise ratio in dB.
    #[arg(long, allow_hyphen_values = true)]
    snr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1024)]
    window: usize,
    #[arg(long, default_value_t = 512)]
    hop: usize,
    #[arg(long, default_value_t = 64)]
    mel_bins: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory; receives `clean/` and `noisy/` subdirectories.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    sequences: usize,
    #[arg(long, default_value_t = 64)]
    frames: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 0.5)]
    silence: f64,
    #[arg(long, default_value_t = 0.0)]
    tonal: f64,
    #[arg(long, default_value_t = 0.5)]
    burst: f64,
    #[arg(long, default_value_t = 0.3)]
    noise_level: f64,
    #[arg(long, default_value_t = 4)]
    run_length: usize,
}

#[derive(Debug, Args)]
struct TrainCodebooksArgs {
    /// Directory of feature files.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    stages: usize,
    #[arg(long, default_value_t = 10)]
    code_bits: u8,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    /// Optional CSV of the k-means objective per stage and iteration.
    #[arg(long)]
    objectives: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OptimArgs {
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-2)]
    step_size: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 3.0)]
    lambda_rate: f64,
    /// Sharpness of the soft step used for gradients.
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.25)]
    full_depth_fraction: f64,
    #[arg(long, default_value_t = 0.8)]
    scale_min: f64,
    #[arg(long, default_value_t = 48.0)]
    scale_max: f64,
}

impl OptimArgs {
    fn config(&self, seed: u64, threads: usize) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lambda_rate: self.lambda_rate,
            full_depth_fraction: self.full_depth_fraction,
            scales: ScaleDistribution::new(self.scale_min, self.scale_max)?,
            alpha: self.alpha,
            step_size: self.step_size,
            momentum: self.momentum,
            iterations: self.iterations,
            batch_size: self.batch_size,
            seed,
            threads,
            ..TrainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainImportanceArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory of input feature files.
    #[arg(long)]
    data: PathBuf,
    /// Directory of target feature files with matching names. Without it
    /// the inputs are their own targets.
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Start from an existing network instead of a fresh one.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    noisy: PathBuf,
    #[arg(long)]
    out_net: PathBuf,
    #[arg(long)]
    out_masker: PathBuf,
    #[arg(long)]
    net: Option<PathBuf>,
    #[arg(long)]
    masker: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 32)]
    masker_hidden: usize,
    #[arg(long, default_value_t = 0.1)]
    lambda_feature: f64,
    /// Skip the clean-data pretraining stage.
    #[arg(long)]
    skip_pretrain: bool,
    #[arg(long, default_value_t = 1000)]
    pretrain_iterations: usize,
    #[arg(long, default_value_t = 1000)]
    finetune_iterations: usize,
    #[arg(long)]
    pretrain_trace: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    optim: OptimArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Cbr,
    Vbr,
}

#[derive(Debug, Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Vbr)]
    mode: ModeArg,
    /// Importance network, required for VBR.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Scaling factor for VBR.
    #[arg(long)]
    scale: Option<f64>,
    /// Depth for CBR.
    #[arg(long)]
    nq: Option<usize>,
    /// Denoise the features before quantization.
    #[arg(long)]
    masker: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    net: PathBuf,
    /// Directory of input feature files.
    #[arg(long)]
    data: PathBuf,
    /// Directory of reference features with matching names; defaults to the inputs.
    #[arg(long)]
    targets: Option<PathBuf>,
    #[arg(long)]
    masker: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SCALES.to_vec())]
    scales: Vec<f64>,
    /// CBR depths; defaults to every depth of the model.
    #[arg(long, value_delimiter = ',')]
    depths: Vec<usize>,
    /// Anchor the VBR curve with the depth-1 and full-depth CBR points.
    #[arg(long)]
    endpoints: bool,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BdrateArgs {
    /// CSV holding the reference curve.
    #[arg(long)]
    reference: PathBuf,
    /// CSV holding the test curve; may be the same file.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "cbr")]
    reference_label: String,
    #[arg(long, default_value = "vbr")]
    test_label: String,
    #[arg(long, default_value = "si_sdr")]
    metric: String,
    /// Reduce both curves to their Pareto envelope first.
    #[arg(long)]
    envelope: bool,
    /// Output JSON; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ImpmapArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    scale: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on runtime or data errors, 2 on usage
/// errors.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match apply_config_file(args) {
        Ok(a) => a,
        Err(ConfigError::Usage(msg)) => {
            eprintln!("error: {msg}");
            return 2;
        }
        Err(ConfigError::Runtime(e)) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

enum ConfigError {
    Usage(String),
    Runtime(Error),
}

const GLOBAL_VALUE_FLAGS: [&str; 3] = ["--seed", "--threads", "--config"];

/// Splices `--key value` pairs from the config file in front of the user's
/// own flags so that later occurrences, i.e. the user's, win.
fn apply_config_file(args: Vec<OsString>) -> std::result::Result<Vec<OsString>, ConfigError> {
    let mut path = None;
    let mut sub_pos = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else if a == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        }
        if GLOBAL_VALUE_FLAGS.contains(&a.as_ref()) {
            i += 2;
            continue;
        }
        if sub_pos.is_none() && !a.starts_with('-') {
            sub_pos = Some(i);
        }
        i += 1;
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| ConfigError::Runtime(Error::io(&path, e)))?;
    let mut global = Vec::new();
    let mut local = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ConfigError::Usage(format!("{}:{}: expected key = value", path.display(), n + 1))
        })?;
        let flag = format!("--{}", key.trim().replace('_', "-"));
        let value = value.trim();
        let target = if flag == "--seed" || flag == "--threads" || flag == "--verbose" {
            &mut global
        } else {
            &mut local
        };
        match value {
            "true" => target.push(OsString::from(flag)),
            "false" => {}
            _ => {
                target.push(OsString::from(flag));
                target.push(OsString::from(value));
            }
        }
    }
    let mut out = Vec::with_capacity(args.len() + global.len() + local.len());
    out.push(args[0].clone());
    out.extend(global);
    let split = sub_pos.map_or(args.len(), |p| p + 1);
    out.extend(args[1..split].iter().cloned());
    out.extend(local);
    out.extend(args[split..].iter().cloned());
    Ok(out)
}

fn run(cli: &Cli) -> Result<()> {
    let threads = cli.threads as usize;
    match &cli.command {
        Command::Mix(a) => {
            let clean = features::load_wav(&a.clean)?;
            let noise = features::load_wav(&a.noise)?;
            let mixed = features::mix_at_snr(&clean, &noise, a.snr, cli.seed)?;
            features::write_wav(&a.out, &mixed)
        }
        Command::Features(a) => {
            let cfg = FeatureConfig {
                window_size: a.window,
                hop: a.hop,
                mel_bins: a.mel_bins,
                out_dim: a.dim,
                normalization: Normalization::identity(a.dim),
                ..FeatureConfig::default()
            };
            let clip = features::load_wav(&a.input)?;
            let z = features::extract_features(&clip, &cfg)?;
            log::info!("{} frames of dimension {} at {} Hz", z.len(), z.dim(), z.frame_rate.hz());
            z.save(&a.out)
        }
        Command::Synth(a) => synth(a, cli.seed),
        Command::TrainCodebooks(a) => {
            let data = load_dir(&a.data)?.into_iter().map(|(_, z)| z).collect::<Vec<_>>();
            let cfg = KMeansConfig {
                max_iters: a.max_iters,
                tolerance: a.tolerance,
            };
            let fit = rvq::train_codebooks(&data, a.stages, a.code_bits, &cfg, cli.seed)?;
            if let Some(path) = &a.objectives {
                let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
                w.write_record(["stage", "iteration", "objective"])?;
                for (s, trace) in fit.objectives.iter().enumerate() {
                    for (i, v) in trace.iter().enumerate() {
                        w.write_record([s.to_string(), i.to_string(), v.to_string()])?;
                    }
                }
                w.flush().map_err(|e| Error::io(path, e))?;
            }
            fit.model.save(&a.out)
        }
        Command::TrainImportance(a) => {
            let model = RvqModel::load(&a.model)?;
            let data = load_pairs(&a.data, a.targets.as_deref())?;
            let net = match &a.init {
                Some(p) => ImportanceNet::load(p)?,
                None => ImportanceNet::init(model.dim(), a.hidden, cli.seed),
            };
            let cfg = a.optim.config(cli.seed, threads)?;
            let out = vrvq::train_importance(&model, &net, &data, &cfg)?;
            if let Some(path) = &a.trace {
                vrvq::write_trace_csv(&out.trace, create(path)?)?;
            }
            out.net.save(&a.out)
        }
        Command::FinetuneDenoiser(a) => {
            let model = RvqModel::load(&a.model)?;
            let paired = load_pairs(&a.noisy, Some(&a.clean))?;
            let clean: Vec<FeatureSequence> = paired.iter().map(|p| p.target.clone()).collect();
            let net = match &a.net {
                Some(p) => ImportanceNet::load(p)?,
                None => ImportanceNet::init(model.dim(), a.hidden, cli.seed),
            };
            let masker = match &a.masker {
                Some(p) => FeatureMasker::load(p)?,
                None => FeatureMasker::init(model.dim(), a.masker_hidden, cli.seed.wrapping_add(1)),
            };
            let cfg = DenoiseTrainConfig {
                lambda_feature: a.lambda_feature,
                base: a.optim.config(cli.seed, threads)?,
                pretrain: !a.skip_pretrain,
                finetune: true,
                pretrain_iterations: a.pretrain_iterations,
                finetune_iterations: a.finetune_iterations,
            };
            let out = denoiser::two_stage_train(&model, &net, &masker, &clean, &paired, &cfg)?;
            if let Some(path) = &a.pretrain_trace {
                vrvq::write_trace_csv(&out.pretrain_trace, create(path)?)?;
            }
            if let Some(path) = &a.trace {
                denoiser::write_finetune_trace_csv(&out.finetune_trace, create(path)?)?;
            }
            out.net.save(&a.out_net)?;
            out.masker.save(&a.out_masker)
        }
        Command::Encode(a) => encode(a),
        Command::Decode(a) => {
            let model = RvqModel::load(&a.model)?;
            let (unpacked, _) = bitstream::read_stream(&a.input)?;
            unpacked.decode(&model)?.save(&a.out)
        }
        Command::Sweep(a) => sweep(a, threads),
        Command::Bdrate(a) => bdrate(a),
        Command::Impmap(a) => {
            let model = RvqModel::load(&a.model)?;
            let net = ImportanceNet::load(&a.net)?;
            let z = FeatureSequence::load(&a.input)?;
            let enc = vrvq::vrvq_encode(&model, &net, &z, a.scale)?;
            let mut buf = Vec::new();
            eval::export_importance_csv(&enc, &model, &mut buf)?;
            emit(a.out.as_deref(), &buf)
        }
    }
}

fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let spec = SynthSpec {
        sequences: a.sequences,
        frames: a.frames,
        dim: a.dim,
        silence: a.silence,
        tonal: a.tonal,
        burst: a.burst,
        noise_level: a.noise_level,
        run_length: a.run_length,
        ..SynthSpec::default()
    };
    let data = features::synth_feature_dataset(&spec, seed)?;
    for sub in ["clean", "noisy"] {
        let dir = a.out.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for (i, pair) in data.iter().enumerate() {
        let name = format!("seq_{i:04}.vfea");
        pair.clean.save(a.out.join("clean").join(&name))?;
        pair.noisy.save(a.out.join("noisy").join(&name))?;
    }
    log::info!("wrote {} pairs to {}", data.len(), a.out.display());
    Ok(())
}

fn encode(a: &EncodeArgs) -> Result<()> {
    let model = RvqModel::load(&a.model)?;
    let mut z = FeatureSequence::load(&a.input)?;
    if let Some(path) = &a.masker {
        z = denoiser::denoise_forward(&FeatureMasker::load(path)?, &z)?.0;
    }
    let enc = match a.mode {
        ModeArg::Vbr => {
            let net_path = a.net.as_ref().ok_or_else(|| Error::config("--mode vbr needs --net"))?;
            let scale = a.scale.ok_or_else(|| Error::config("--mode vbr needs --scale"))?;
            vrvq::vrvq_encode(&model, &ImportanceNet::load(net_path)?, &z, scale)?
        }
        ModeArg::Cbr => {
            let depth = a.nq.ok_or_else(|| Error::config("--mode cbr needs --nq"))?;
            vrvq::cbr_encode(&model, &z, depth)?
        }
    };
    let stream = bitstream::pack(&enc, &StreamParams::for_model(&model, z.frame_rate))?;
    let rate = bitstream::measure_bitrate(&stream);
    log::info!(
        "{} frames, mean depth {:.3}, {:.4} kbps ({:.5} kbps side info)",
        enc.depths.len(),
        enc.mean_depth(),
        rate.total_kbps,
        rate.side_info_kbps
    );
    stream.save(&a.out)
}

fn sweep(a: &SweepArgs, threads: usize) -> Result<()> {
    let model = RvqModel::load(&a.model)?;
    let net = ImportanceNet::load(&a.net)?;
    let mut pairs = load_pairs(&a.data, a.targets.as_deref())?;
    if let Some(path) = &a.masker {
        let masker = FeatureMasker::load(path)?;
        for p in &mut pairs {
            p.input = denoiser::denoise_forward(&masker, &p.input)?.0;
        }
    }
    let depths = if a.depths.is_empty() {
        (1..=model.stages()).collect()
    } else {
        a.depths.clone()
    };
    let points = vrvq::sweep_curves(&model, &net, &pairs, &a.scales, &depths, threads)?;
    let mut curves = Vec::new();
    for metric in Metric::ALL {
        let (cbr, vbr) = vrvq::rd_curves(&points, metric, a.endpoints, model.stages())?;
        for c in [cbr, vbr] {
            curves.push(raw_orientation(c, metric)?);
        }
    }
    let mut buf = Vec::new();
    eval::write_rd_csv(&curves, &mut buf)?;
    emit(a.out.as_deref(), &buf)
}

/// Undoes the sign flip applied to lower-is-better metrics so files carry
/// the metric values themselves.
fn raw_orientation(curve: RdCurve, metric: Metric) -> Result<RdCurve> {
    if metric.higher_is_better() {
        return Ok(curve);
    }
    let points = curve
        .points()
        .iter()
        .map(|p| RdPoint {
            quality: -p.quality,
            ..p.clone()
        })
        .collect();
    RdCurve::new(curve.label, curve.metric, points)
}

fn bdrate(a: &BdrateArgs) -> Result<()> {
    let metric = Metric::parse(&a.metric)?;
    let pick = |path: &Path, label: &str| -> Result<RdCurve> {
        let curve = eval::read_rd_csv_file(path)?
            .into_iter()
            .find(|c| c.label == label && c.metric == a.metric)
            .ok_or_else(|| Error::InvalidCurve {
                label: label.to_string(),
                reason: format!("no '{}' curve in {}", a.metric, path.display()),
            })?;
        // Quality must increase with bitrate for the integration.
        let curve = raw_orientation(curve, metric)?;
        Ok(if a.envelope { curve.pareto_envelope() } else { curve })
    };
    let reference = pick(&a.reference, &a.reference_label)?;
    let test = pick(&a.test, &a.test_label)?;
    let mut report = eval::bd_rate(&reference, &test)?;
    if !metric.higher_is_better() {
        report.quality_range = [-report.quality_range[1], -report.quality_range[0]];
    }
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    emit(a.out.as_deref(), &json)
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| Error::io(p, e)),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::CorruptStream(format!("{}: {other:?}", path.display())),
    }
}

/// Feature files of a directory in file-name order.
fn load_dir(dir: &Path) -> Result<Vec<(OsString, FeatureSequence)>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "vfea"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::config(format!("no .vfea files in {}", dir.display())));
    }
    names
        .into_iter()
        .map(|p| {
            let z = FeatureSequence::load(&p)?;
            Ok((p.file_name().unwrap_or_default().to_os_string(), z))
        })
        .collect()
}

fn load_pairs(inputs: &Path, targets: Option<&Path>) -> Result<Vec<TrainingPair>> {
    let inputs = load_dir(inputs)?;
    match targets {
        None => Ok(inputs.into_iter().map(|(_, z)| TrainingPair::clean(z)).collect()),
        Some(dir) => inputs
            .into_iter()
            .map(|(name, z)| {
                let target = FeatureSequence::load(dir.join(&name))?;
                TrainingPair::new(z, target)
            })
            .collect(),
    }
}
