//! Quality metrics, rate-distortion curves and Bjøntegaard-delta rates.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bitstream::{self, StreamParams};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::rvq::RvqModel;
use crate::vrvq::VrvqEncoding;

/// Scale-invariant SDR in dB. Returns `f64::INFINITY` when the estimate is
/// an exact multiple of the reference.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            got: estimate.len(),
        });
    }
    if reference.is_empty() {
        return Err(Error::Empty("signal"));
    }
    let ref_energy: f64 = reference.iter().map(|r| r * r).sum();
    if ref_energy == 0.0 {
        return Err(Error::SilentInput("reference"));
    }
    let dot: f64 = reference.iter().zip(estimate).map(|(r, e)| r * e).sum();
    let alpha = dot / ref_energy;
    let (mut target, mut noise) = (0.0, 0.0);
    for (&r, &e) in reference.iter().zip(estimate) {
        let s = alpha * r;
        target += s * s;
        noise += (e - s) * (e - s);
    }
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (target / noise).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionMetrics {
    pub mse: f64,
    pub si_sdr: f64,
    /// Mean over frames of the RMS column difference.
    pub lsd: f64,
}

impl DistortionMetrics {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Mse => self.mse,
            Metric::SiSdr => self.si_sdr,
            Metric::Lsd => self.lsd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Mse,
    SiSdr,
    Lsd,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Mse, Metric::SiSdr, Metric::Lsd];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::SiSdr => "si_sdr",
            Metric::Lsd => "lsd",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::SiSdr)
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::config(format!("unknown metric '{name}'")))
    }
}

pub fn distortion_metrics(z_ref: &FeatureSequence, z_hat: &FeatureSequence) -> Result<DistortionMetrics> {
    if z_ref.dim() != z_hat.dim() || z_ref.len() != z_hat.len() {
        return Err(Error::DimensionMismatch {
            expected: z_ref.as_slice().len(),
            got: z_hat.as_slice().len(),
        });
    }
    let mse = crate::rvq::mse(z_ref.as_slice(), z_hat.as_slice());
    let lsd = z_ref
        .frames()
        .zip(z_hat.frames())
        .map(|(a, b)| crate::rvq::mse(a, b).sqrt())
        .sum::<f64>()
        / z_ref.len() as f64;
    let si_sdr = si_sdr(z_ref.as_slice(), z_hat.as_slice())?;
    Ok(DistortionMetrics { mse, si_sdr, lsd })
}

/// Piecewise-cubic Akima interpolant.
///
/// Knot slopes use Akima's weighting of the neighbouring segment slopes,
/// with two extrapolated segments at each end. Two knots give a straight
/// line and three knots use the slopes of the interpolating parabola.
/// Queries outside the knot range evaluate the nearest end polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct Akima {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Per-segment polynomial coefficients in `u = x - xs[i]`.
    coeffs: Vec<[f64; 4]>,
}

impl Akima {
    pub fn new(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n != ys.len() {
            return Err(Error::DimensionMismatch { expected: n, got: ys.len() });
        }
        if n < 2 {
            return Err(Error::config("akima interpolation needs at least 2 points"));
        }
        if xs.iter().chain(ys).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("interpolation knots"));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("interpolation abscissae must be strictly increasing"));
        }
        let m: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).collect();
        let slopes = match n {
            2 => vec![m[0], m[0]],
            3 => {
                let (h0, h1) = (xs[1] - xs[0], xs[2] - xs[1]);
                let mid = (h1 * m[0] + h0 * m[1]) / (h0 + h1);
                vec![2.0 * m[0] - mid, mid, 2.0 * m[1] - mid]
            }
            _ => akima_slopes(&m),
        };
        let coeffs = (0..n - 1)
            .map(|i| {
                let h = xs[i + 1] - xs[i];
                let (t0, t1) = (slopes[i], slopes[i + 1]);
                [
                    ys[i],
                    t0,
                    (3.0 * m[i] - 2.0 * t0 - t1) / h,
                    (t0 + t1 - 2.0 * m[i]) / (h * h),
                ]
            })
            .collect();
        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            coeffs,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let last = self.xs.len() - 1;
        let seg = match self.xs.binary_search_by(|k| k.total_cmp(&x)) {
            Ok(i) => return self.ys[i],
            Err(0) => 0,
            Err(i) => (i - 1).min(last - 1),
        };
        let u = x - self.xs[seg];
        let [c0, c1, c2, c3] = self.coeffs[seg];
        c0 + u * (c1 + u * (c2 + u * c3))
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }
}

fn akima_slopes(m: &[f64]) -> Vec<f64> {
    let n = m.len() + 1;
    // Two phantom segments on each side by linear extrapolation of slopes.
    let mut ext = Vec::with_capacity(n + 3);
    let before1 = 2.0 * m[0] - m[1];
    let before2 = 2.0 * before1 - m[0];
    ext.push(before2);
    ext.push(before1);
    ext.extend_from_slice(m);
    let after1 = 2.0 * m[n - 2] - m[n - 3];
    let after2 = 2.0 * after1 - m[n - 2];
    ext.push(after1);
    ext.push(after2);
    (0..n)
        .map(|i| {
            // ext[i + 2] is the segment slope to the right of knot i.
            let (m_l2, m_l1, m_r1, m_r2) = (ext[i], ext[i + 1], ext[i + 2], ext[i + 3]);
            let w_left = (m_r2 - m_r1).abs();
            let w_right = (m_l1 - m_l2).abs();
            if w_left + w_right == 0.0 {
                0.5 * (m_l1 + m_r1)
            } else {
                (w_left * m_l1 + w_right * m_r1) / (w_left + w_right)
            }
        })
        .collect()
}

/// Composite Simpson rule with `panels` (rounded up to even) sub-intervals.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let panels = panels.max(2).next_multiple_of(2);
    let h = (hi - lo) / panels as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub bitrate_kbps: f64,
    pub quality: f64,
    pub label: String,
}

/// Points of one curve for one metric, sorted by bitrate.
#[derive(Debug, Clone, PartialEq)]
pub struct RdCurve {
    pub label: String,
    pub metric: String,
    points: Vec<RdPoint>,
}

impl RdCurve {
    /// Sorts by bitrate and drops exact duplicates. Two points at the same
    /// bitrate with different quality are an error.
    pub fn new(label: impl Into<String>, metric: impl Into<String>, mut points: Vec<RdPoint>) -> Result<Self> {
        let label = label.into();
        let invalid = |reason: String| Error::InvalidCurve {
            label: label.clone(),
            reason,
        };
        if points
            .iter()
            .any(|p| !(p.bitrate_kbps > 0.0 && p.bitrate_kbps.is_finite()) || p.quality.is_nan())
        {
            return Err(invalid("bitrates must be positive and finite, quality not NaN".into()));
        }
        points.sort_by(|a, b| a.bitrate_kbps.total_cmp(&b.bitrate_kbps));
        points.dedup_by(|b, a| a.bitrate_kbps == b.bitrate_kbps && a.quality == b.quality);
        if let Some(w) = points.windows(2).find(|w| w[0].bitrate_kbps == w[1].bitrate_kbps) {
            return Err(invalid(format!(
                "two qualities at bitrate {} kbps",
                w[0].bitrate_kbps
            )));
        }
        Ok(Self {
            label,
            metric: metric.into(),
            points,
        })
    }

    pub fn points(&self) -> &[RdPoint] {
        &self.points
    }

    /// Keeps only points whose quality beats every cheaper point.
    pub fn pareto_envelope(&self) -> Self {
        let mut best = f64::NEG_INFINITY;
        let points = self
            .points
            .iter()
            .filter(|p| {
                let keep = p.quality > best;
                if keep {
                    best = p.quality;
                }
                keep
            })
            .cloned()
            .collect();
        Self {
            label: self.label.clone(),
            metric: self.metric.clone(),
            points,
        }
    }

    fn quality_range(&self) -> (f64, f64) {
        (self.points[0].quality, self.points[self.points.len() - 1].quality)
    }

    /// Akima fit of ln(bitrate) against quality.
    fn log_rate_interpolant(&self) -> Result<Akima> {
        let invalid = |reason: String| Error::InvalidCurve {
            label: self.label.clone(),
            reason,
        };
        if self.points.len() < 2 {
            return Err(invalid(format!("{} points, need at least 2", self.points.len())));
        }
        if self.points.iter().any(|p| !p.quality.is_finite()) {
            return Err(invalid("non-finite quality".into()));
        }
        if let Some(w) = self.points.windows(2).find(|w| w[1].quality <= w[0].quality) {
            return Err(invalid(format!(
                "quality not strictly increasing with bitrate: {} kbps -> {}, {} kbps -> {}; \
                 choose endpoints or take the envelope",
                w[0].bitrate_kbps, w[0].quality, w[1].bitrate_kbps, w[1].quality
            )));
        }
        let q: Vec<f64> = self.points.iter().map(|p| p.quality).collect();
        let r: Vec<f64> = self.points.iter().map(|p| p.bitrate_kbps.ln()).collect();
        Akima::new(&q, &r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdRateReport {
    pub reference: String,
    pub test: String,
    pub metric: String,
    pub bd_rate_percent: f64,
    pub quality_range: [f64; 2],
}

pub const BD_PANELS: usize = 1000;

/// Average bitrate difference of `test` over `reference` at equal quality,
/// in percent. Negative means `test` needs fewer bits.
pub fn bd_rate(reference: &RdCurve, test: &RdCurve) -> Result<BdRateReport> {
    let ref_fit = reference.log_rate_interpolant()?;
    let test_fit = test.log_rate_interpolant()?;
    let (ref_lo, ref_hi) = reference.quality_range();
    let (test_lo, test_hi) = test.quality_range();
    let lo = ref_lo.max(test_lo);
    let hi = ref_hi.min(test_hi);
    if !(hi > lo) {
        return Err(Error::NoOverlap {
            ref_lo,
            ref_hi,
            test_lo,
            test_hi,
        });
    }
    let int_ref = simpson(|q| ref_fit.eval(q), lo, hi, BD_PANELS);
    let int_test = simpson(|q| test_fit.eval(q), lo, hi, BD_PANELS);
    let delta = (int_test - int_ref) / (hi - lo);
    Ok(BdRateReport {
        reference: reference.label.clone(),
        test: test.label.clone(),
        metric: reference.metric.clone(),
        bd_rate_percent: delta.exp_m1() * 100.0,
        quality_range: [lo, hi],
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    label: String,
    bitrate_kbps: f64,
    metric_name: String,
    value: f64,
}

pub fn write_rd_csv(curves: &[RdCurve], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in curves {
        for p in &c.points {
            w.serialize(CsvRow {
                label: c.label.clone(),
                bitrate_kbps: p.bitrate_kbps,
                metric_name: c.metric.clone(),
                value: p.quality,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Groups rows by `(label, metric_name)` in order of first appearance.
pub fn read_rd_csv(input: impl std::io::Read) -> Result<Vec<RdCurve>> {
    let mut r = csv::Reader::from_reader(input);
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: HashMap<(String, String), Vec<RdPoint>> = HashMap::new();
    for row in r.deserialize::<CsvRow>() {
        let row = row?;
        let key = (row.label.clone(), row.metric_name.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(RdPoint {
            bitrate_kbps: row.bitrate_kbps,
            quality: row.value,
            label: row.label,
        });
    }
    order
        .into_iter()
        .map(|key| {
            let points = groups.remove(&key).unwrap_or_default();
            RdCurve::new(key.0, key.1, points)
        })
        .collect()
}

pub fn read_rd_csv_file(path: impl AsRef<Path>) -> Result<Vec<RdCurve>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_rd_csv(file)
}

/// Writes `frame,p,n_q` rows for a VBR encoding, preceded by a comment line
/// with the mean bitrate of the packed stream.
pub fn export_importance_csv(encoding: &VrvqEncoding, model: &RvqModel, mut out: impl Write) -> Result<()> {
    let p = encoding.importance.as_ref().ok_or(Error::MissingImportance)?;
    let stream = bitstream::pack(encoding, &StreamParams::for_model(model, encoding.frame_rate))?;
    let rate = bitstream::measure_bitrate(&stream);
    writeln!(out, "# mean_bitrate_kbps={}", rate.total_kbps)?;
    if let crate::vrvq::EncodingMode::Vbr { scale } = encoding.mode {
        writeln!(out, "# scale={scale}")?;
    }
    writeln!(out, "frame,p,n_q")?;
    for (t, (pv, d)) in p.values().iter().zip(&encoding.depths).enumerate() {
        writeln!(out, "{t},{pv},{d}")?;
    }
    Ok(())
}
