//! Shows how an importance score and a scaling factor become a prefix mask
//! over the quantizer stages, and which stages receive gradient.
//!
//! cargo run --example mask_allocation

use vrvq::importance::depth_for;
use vrvq::{i2m_hard, i2m_ste, surrogate_eval};

fn main() {
    let n_q = 8;
    let alpha = 2.0;
    for (p, l) in [(0.1, 4.0), (0.5, 8.0), (0.37, 12.0), (0.9, 48.0)] {
        let mask = i2m_hard(p, l, n_q);
        let (_, sens) = i2m_ste(p, l, alpha, n_q);
        println!("p = {p:<4} l = {l:<4} s = {:<5.2} depth {} mask {:?}", l * p, depth_for(p, l, n_q), mask);
        let sens: Vec<String> = sens.iter().map(|v| format!("{v:.3}")).collect();
        println!("    dm/dp {}", sens.join(" "));
    }

    println!("soft step for stage 2 at alpha = {alpha}");
    for i in 0..=12 {
        let s = 1.0 + 0.25 * i as f64;
        let (v, d) = surrogate_eval(s, 2, alpha);
        println!("  s = {s:<5} f = {v:.4} f' = {d:.4}");
    }
}
