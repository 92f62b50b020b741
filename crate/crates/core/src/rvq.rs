//! Constant-bitrate residual vector quantization.
//!
//! Each stage `i` quantizes the residual left by stages `1..i`; the decoder
//! sums a prefix of the selected codewords. Codebooks are fitted stage by
//! stage with Lloyd k-means on the residuals of the whole training set.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{check_dim, FeatureSequence};
use crate::io::{self, ByteReader};

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    /// `K x D`, row-major.
    vectors: Vec<f64>,
}

impl Codebook {
    pub fn new(dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if dim == 0 || vectors.is_empty() || vectors.len() % dim != 0 {
            return Err(Error::config("codebook must hold at least one whole vector"));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("codebook"));
        }
        Ok(Self { dim, vectors })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::config("codebook rows have unequal lengths"));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn size(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.vectors.chunks_exact(self.dim)
    }

    /// Index of the closest codeword under squared Euclidean distance, its
    /// distance, and the codeword. Ties go to the lowest index.
    pub fn nearest(&self, v: &[f64]) -> (usize, f64, &[f64]) {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, row) in self.rows().enumerate() {
            let d = squared_distance(row, v);
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        (best, best_dist, self.row(best))
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Checked nearest-neighbour lookup.
pub fn nearest_code<'a>(cb: &'a Codebook, v: &[f64]) -> Result<(usize, &'a [f64])> {
    check_dim(cb.dim(), v.len())?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("query vector"));
    }
    let (i, _, q) = cb.nearest(v);
    Ok((i, q))
}

/// Full-depth code indices, stored frame-major: `indices[t * n_q + i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    n_q: usize,
    indices: Vec<u32>,
}

impl CodeMatrix {
    pub fn new(n_q: usize, indices: Vec<u32>) -> Result<Self> {
        if n_q == 0 || indices.is_empty() || indices.len() % n_q != 0 {
            return Err(Error::config("code matrix must hold whole frames"));
        }
        Ok(Self { n_q, indices })
    }

    pub fn stages(&self) -> usize {
        self.n_q
    }

    pub fn frames(&self) -> usize {
        self.indices.len() / self.n_q
    }

    pub fn get(&self, stage: usize, frame: usize) -> u32 {
        self.indices[frame * self.n_q + stage]
    }

    pub fn frame(&self, t: usize) -> &[u32] {
        &self.indices[t * self.n_q..(t + 1) * self.n_q]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RvqModel {
    dim: usize,
    code_bits: u8,
    codebooks: Vec<Codebook>,
    fingerprint: u64,
}

const VRQM_MAGIC: &[u8; 4] = b"VRQM";
const VRQM_VERSION: u8 = 1;

impl RvqModel {
    /// `code_bits` is `log2 K` and must match every codebook's size.
    pub fn new(codebooks: Vec<Codebook>, code_bits: u8) -> Result<Self> {
        let first = codebooks.first().ok_or(Error::Empty("codebook list"))?;
        let dim = first.dim();
        if codebooks.len() > usize::from(u8::MAX) {
            return Err(Error::config("at most 255 stages"));
        }
        if !(1..=16).contains(&code_bits) {
            return Err(Error::config("code bits must be in [1, 16]"));
        }
        for cb in &codebooks {
            check_dim(dim, cb.dim())?;
            if cb.size() != 1 << code_bits {
                return Err(Error::config(format!(
                    "codebook of {} entries does not match {code_bits} code bits",
                    cb.size()
                )));
            }
        }
        let mut model = Self {
            dim,
            code_bits,
            codebooks,
            fingerprint: 0,
        };
        model.fingerprint = io::fnv1a(&model.payload());
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stages(&self) -> usize {
        self.codebooks.len()
    }

    pub fn code_bits(&self) -> u8 {
        self.code_bits
    }

    pub fn codebook_size(&self) -> usize {
        1 << self.code_bits
    }

    pub fn codebook(&self, stage: usize) -> &Codebook {
        &self.codebooks[stage]
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for cb in &self.codebooks {
            io::put_f32s(&mut out, &cb.vectors);
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(VRQM_MAGIC);
        out.push(VRQM_VERSION);
        out.extend_from_slice(&(self.dim as u16).to_le_bytes());
        out.push(self.stages() as u8);
        out.push(self.code_bits);
        let payload = self.payload();
        out.extend_from_slice(&payload);
        out.extend_from_slice(&io::fnv1a(&payload).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(VRQM_MAGIC)?;
        let version = r.u8()?;
        if version != VRQM_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim = usize::from(r.u16()?);
        let stages = usize::from(r.u8()?);
        let bits = r.u8()?;
        if !(1..=16).contains(&bits) || dim == 0 || stages == 0 {
            return Err(Error::CorruptStream("model header out of range".into()));
        }
        let k = 1usize << bits;
        let start = r.position();
        let codebooks = (0..stages)
            .map(|_| Codebook::new(dim, r.f32s(k * dim)?))
            .collect::<Result<Vec<_>>>()?;
        let stored = r.u64()?;
        r.finish()?;
        let computed = io::fnv1a(&bytes[start..bytes.len() - 8]);
        if stored != computed {
            return Err(Error::CorruptStream(format!(
                "model fingerprint {stored:#018x} does not match payload {computed:#018x}"
            )));
        }
        Self::new(codebooks, bits)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&io::read_file(path.as_ref())?)
    }

    /// Runs the cascade on one frame, writing the chosen indices and calling
    /// `visit(stage, codeword)` for each stage.
    pub(crate) fn encode_frame(&self, frame: &[f64], codes: &mut Vec<u32>, mut visit: impl FnMut(usize, &[f64])) {
        let mut residual = frame.to_vec();
        for (i, cb) in self.codebooks.iter().enumerate() {
            let (idx, _, q) = cb.nearest(&residual);
            codes.push(idx as u32);
            visit(i, q);
            for (r, qv) in residual.iter_mut().zip(q) {
                *r -= qv;
            }
        }
    }

    fn check_depth(&self, depth: usize) -> Result<()> {
        if depth == 0 || depth > self.stages() {
            return Err(Error::DepthOutOfRange {
                depth,
                max: self.stages(),
            });
        }
        Ok(())
    }

    /// Sum of the codewords named by `indices` (a prefix of the cascade).
    pub fn decode_frame(&self, indices: &[u32], out: &mut [f64]) -> Result<()> {
        self.check_depth(indices.len())?;
        out.fill(0.0);
        for (cb, &idx) in self.codebooks.iter().zip(indices) {
            let idx = idx as usize;
            if idx >= cb.size() {
                return Err(Error::IndexOutOfRange {
                    index: idx,
                    size: cb.size(),
                });
            }
            for (o, q) in out.iter_mut().zip(cb.row(idx)) {
                *o += q;
            }
        }
        Ok(())
    }
}

pub fn rvq_encode(model: &RvqModel, z: &FeatureSequence) -> Result<CodeMatrix> {
    check_dim(model.dim(), z.dim())?;
    let mut indices = Vec::with_capacity(z.len() * model.stages());
    for frame in z.frames() {
        model.encode_frame(frame, &mut indices, |_, _| {});
    }
    CodeMatrix::new(model.stages(), indices)
}

/// Prefix reconstruction: frame `t` sums its first `depths[t]` codewords.
pub fn rvq_decode(
    model: &RvqModel,
    codes: &CodeMatrix,
    depths: &[usize],
    frame_rate: crate::features::FrameRate,
) -> Result<FeatureSequence> {
    check_dim(model.stages(), codes.stages())?;
    if depths.len() != codes.frames() {
        return Err(Error::DimensionMismatch {
            expected: codes.frames(),
            got: depths.len(),
        });
    }
    let mut out = FeatureSequence::zeros(model.dim(), codes.frames(), frame_rate);
    for (t, &depth) in depths.iter().enumerate() {
        model.check_depth(depth)?;
        model.decode_frame(&codes.frame(t)[..depth], out.frame_mut(t))?;
    }
    Ok(out)
}

/// Decodes frames whose in-use indices were read back from a stream.
pub fn decode_in_use(
    model: &RvqModel,
    frames: &[Vec<u32>],
    frame_rate: crate::features::FrameRate,
) -> Result<FeatureSequence> {
    if frames.is_empty() {
        return Err(Error::Empty("frame list"));
    }
    let mut out = FeatureSequence::zeros(model.dim(), frames.len(), frame_rate);
    for (t, idx) in frames.iter().enumerate() {
        model.decode_frame(idx, out.frame_mut(t))?;
    }
    Ok(out)
}

/// Mean of `||z[t] - z_q[t]||^2 / D` at a constant depth.
pub fn quantization_error(model: &RvqModel, z: &FeatureSequence, depth: usize) -> Result<f64> {
    model.check_depth(depth)?;
    let codes = rvq_encode(model, z)?;
    let recon = rvq_decode(model, &codes, &vec![depth; z.len()], z.frame_rate)?;
    Ok(mse(z.as_slice(), recon.as_slice()))
}

pub(crate) fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub max_iters: usize,
    /// Stop when the relative objective change drops below this.
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
}

/// Lloyd k-means. Initialization is k-means++ with the first centroid pinned
/// to the data mean; empty clusters move to the point farthest from its
/// centroid. Centroids are rounded to `f32` so they survive serialization.
pub fn kmeans(points: &[&[f64]], k: usize, cfg: &KMeansConfig, rng: &mut impl Rng) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::config("k must be positive"));
    }
    if points.len() < k {
        return Err(Error::TooFewFrames {
            frames: points.len(),
            k,
        });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("k-means input"));
    }
    let n = points.len();

    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, v) in mean.iter_mut().zip(*p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m = round_f32(*m / n as f64));

    let mut centroids = vec![mean];
    let mut nearest: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c: Vec<f64> = points[pick].iter().map(|&v| round_f32(v)).collect();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }

    let mut objective = Vec::new();
    let mut assign = vec![0usize; n];
    let mut dist = vec![0.0; n];
    for iter in 0..cfg.max_iters.max(1) {
        let cb = Codebook::from_rows(&centroids)?;
        for (i, p) in points.iter().enumerate() {
            let (j, d, _) = cb.nearest(p);
            assign[i] = j;
            dist[i] = d;
        }
        let obj: f64 = dist.iter().sum();
        let prev = objective.last().copied();
        objective.push(obj);
        if let Some(prev) = prev {
            let change = (prev - obj).abs() / prev.max(f64::MIN_POSITIVE);
            if change < cfg.tolerance || obj == 0.0 {
                break;
            }
        } else if obj == 0.0 {
            break;
        }
        if iter + 1 == cfg.max_iters {
            break;
        }
        update_centroids(points, &assign, &mut dist, &mut centroids);
    }
    Ok(KMeansFit {
        centroids,
        objective,
    })
}

fn update_centroids(points: &[&[f64]], assign: &[usize], dist: &mut [f64], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    let dim = centroids[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assign) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(*p) {
            *s += v;
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            let updated: Vec<f64> = sums[j].iter().map(|s| round_f32(s / counts[j] as f64)).collect();
            // Rounding can nudge a mean off its optimum; keep the old centroid
            // if the rounded one is worse for its own cluster.
            let old_cost: f64 = points
                .iter()
                .zip(assign)
                .filter(|(_, &a)| a == j)
                .map(|(p, _)| squared_distance(p, &centroids[j]))
                .sum();
            let new_cost: f64 = points
                .iter()
                .zip(assign)
                .filter(|(_, &a)| a == j)
                .map(|(p, _)| squared_distance(p, &updated))
                .sum();
            if new_cost <= old_cost {
                centroids[j] = updated;
            }
        }
    }
    for j in 0..k {
        if counts[j] == 0 {
            let (far, _) = dist
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
            centroids[j] = points[far].iter().map(|&v| round_f32(v)).collect();
            dist[far] = 0.0;
        }
    }
}

fn round_f32(v: f64) -> f64 {
    f64::from(v as f32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookTraining {
    pub model: RvqModel,
    /// Lloyd objective trace for each stage.
    pub objectives: Vec<Vec<f64>>,
}

/// Fits `stages` codebooks of `2^code_bits` entries each on the residuals of
/// every frame in `dataset`.
pub fn train_codebooks(
    dataset: &[FeatureSequence],
    stages: usize,
    code_bits: u8,
    cfg: &KMeansConfig,
    seed: u64,
) -> Result<CodebookTraining> {
    if stages == 0 {
        return Err(Error::config("need at least one stage"));
    }
    if !(1..=16).contains(&code_bits) {
        return Err(Error::config("code bits must be in [1, 16]"));
    }
    let first = dataset.first().ok_or(Error::Empty("training set"))?;
    let dim = first.dim();
    for seq in dataset {
        check_dim(dim, seq.dim())?;
    }
    let k = 1usize << code_bits;
    let mut residuals: Vec<Vec<f64>> = dataset.iter().flat_map(|s| s.frames().map(<[f64]>::to_vec)).collect();
    if residuals.len() < k {
        return Err(Error::TooFewFrames {
            frames: residuals.len(),
            k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut codebooks = Vec::with_capacity(stages);
    let mut objectives = Vec::with_capacity(stages);
    for stage in 0..stages {
        let views: Vec<&[f64]> = residuals.iter().map(Vec::as_slice).collect();
        let fit = kmeans(&views, k, cfg, &mut rng)?;
        log::debug!(
            "stage {stage}: {} lloyd iterations, objective {:.6e}",
            fit.objective.len(),
            fit.objective.last().copied().unwrap_or(0.0)
        );
        let cb = Codebook::from_rows(&fit.centroids)?;
        for r in &mut residuals {
            let (_, _, q) = cb.nearest(r);
            for (rv, qv) in r.iter_mut().zip(q) {
                *rv -= qv;
            }
        }
        codebooks.push(cb);
        objectives.push(fit.objective);
    }
    Ok(CodebookTraining {
        model: RvqModel::new(codebooks, code_bits)?,
        objectives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FrameRate;

    fn seq1(values: &[f64]) -> FeatureSequence {
        FeatureSequence::new(1, values.to_vec(), FrameRate::default()).unwrap()
    }

    fn toy_model() -> RvqModel {
        let c1 = Codebook::new(1, vec![0.0, 8.0]).unwrap();
        let c2 = Codebook::new(1, vec![0.0, 1.0]).unwrap();
        RvqModel::new(vec![c1, c2], 1).unwrap()
    }

    #[test]
    fn nearest_code_examples() {
        let cb = Codebook::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(nearest_code(&cb, &[0.9, 0.8]).unwrap(), (1, &[1.0, 1.0][..]));
        assert_eq!(nearest_code(&cb, &[0.5, 0.5]).unwrap().0, 0);
        for (i, row) in cb.rows().enumerate() {
            let (j, d, _) = cb.nearest(row);
            assert_eq!((j, d), (i, 0.0));
        }
        assert!(matches!(
            nearest_code(&cb, &[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(matches!(nearest_code(&cb, &[f64::NAN, 0.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn hand_cascade() {
        let model = toy_model();
        let z = seq1(&[9.0, 8.0]);
        let codes = rvq_encode(&model, &z).unwrap();
        assert_eq!(codes.frame(0), &[1, 1]);
        assert_eq!(codes.frame(1), &[1, 0]);
        let full = rvq_decode(&model, &codes, &[2, 2], z.frame_rate).unwrap();
        assert_eq!(full.as_slice(), &[9.0, 8.0]);
        let prefix = rvq_decode(&model, &codes, &[1, 1], z.frame_rate).unwrap();
        assert_eq!(prefix.as_slice(), &[8.0, 8.0]);
        assert!(matches!(
            rvq_decode(&model, &codes, &[0, 1], z.frame_rate),
            Err(Error::DepthOutOfRange { depth: 0, .. })
        ));
        assert!(matches!(
            rvq_decode(&model, &codes, &[3, 1], z.frame_rate),
            Err(Error::DepthOutOfRange { depth: 3, .. })
        ));
        let bad = CodeMatrix::new(2, vec![2, 0]).unwrap();
        assert!(matches!(
            rvq_decode(&model, &bad, &[1], z.frame_rate),
            Err(Error::IndexOutOfRange { index: 2, size: 2 })
        ));
    }

    #[test]
    fn encode_is_frame_local() {
        let model = toy_model();
        let z = seq1(&[9.0, 0.4, 7.2, 3.9]);
        let perm = [2, 0, 3, 1];
        let zp = seq1(&perm.map(|i| z.as_slice()[i]));
        let c = rvq_encode(&model, &z).unwrap();
        let cp = rvq_encode(&model, &zp).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(cp.frame(new), c.frame(old));
        }
    }

    #[test]
    fn kmeans_recovers_exact_clusters() {
        let data = [seq1(&[0.0, 0.0, 10.0, 10.0])];
        let fit = train_codebooks(&data, 1, 1, &KMeansConfig::default(), 0).unwrap();
        let mut centroids: Vec<f64> = fit.model.codebook(0).rows().map(|r| r[0]).collect();
        centroids.sort_by(f64::total_cmp);
        assert_eq!(centroids, vec![0.0, 10.0]);
        assert_eq!(*fit.objectives[0].last().unwrap(), 0.0);
        assert_eq!(quantization_error(&fit.model, &data[0], 1).unwrap(), 0.0);
    }

    #[test]
    fn too_few_frames() {
        let data = [seq1(&[0.0, 1.0, 2.0])];
        assert!(matches!(
            train_codebooks(&data, 1, 2, &KMeansConfig::default(), 0),
            Err(Error::TooFewFrames { frames: 3, k: 4 })
        ));
    }

    #[test]
    fn model_file_roundtrip() {
        let model = toy_model();
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..4], b"VRQM");
        assert_eq!(bytes.len(), 4 + 1 + 2 + 1 + 1 + 2 * 2 * 4 + 8);
        let back = RvqModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        let mut corrupt = bytes.clone();
        corrupt[10] ^= 0x40;
        assert!(matches!(RvqModel::from_bytes(&corrupt), Err(Error::CorruptStream(_))));
    }
}
