//! Bjøntegaard-delta rate between analytic rate-distortion curves, and the
//! JSON report the CLI emits.
//!
//! cargo run --example bd_rate

use vrvq::{bd_rate, RdCurve, RdPoint};

fn curve(label: &str, rate_factor: f64) -> vrvq::Result<RdCurve> {
    let points = [0.5, 1.0, 1.5, 2.0, 2.5]
        .iter()
        .map(|&kbps: &f64| RdPoint {
            bitrate_kbps: kbps * rate_factor,
            quality: 10.0 * kbps.ln() + 20.0,
            label: label.to_string(),
        })
        .collect();
    RdCurve::new(label, "si_sdr", points)
}

fn main() -> vrvq::Result<()> {
    let reference = curve("reference", 1.0)?;
    for (label, factor) in [("same", 1.0), ("double", 2.0), ("half", 0.5), ("ten_percent_less", 0.9)] {
        let report = bd_rate(&reference, &curve(label, factor)?)?;
        println!("{label:>16}: {:+.4}%", report.bd_rate_percent);
    }
    let report = bd_rate(&reference, &curve("half", 0.5)?)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
