use vrvq::vrvq::Allocation;
use vrvq::{importance_forward, rvq_encode, ImportanceNet, RvqModel, TrainingPair};

/// Soft step written out from its closed form.
pub fn soft_step(s: f64, k: usize, alpha: f64) -> f64 {
    let k = k as f64;
    ((alpha * (s - k)).cosh() / (alpha * (k + 1.0 - s)).cosh()).ln() / (2.0 * alpha) + 0.5
}

/// Batch mean of feature MSE plus `lambda` times mean importance, with the
/// relaxed mask in the forward pass. Full-depth members carry no rate term.
pub fn soft_forward_loss(
    model: &RvqModel,
    net: &ImportanceNet,
    batch: &[TrainingPair],
    plan: &[Allocation],
    alpha: f64,
    lambda: f64,
) -> f64 {
    let mut total = 0.0;
    for (pair, alloc) in batch.iter().zip(plan) {
        let p = importance_forward(net, &pair.input).unwrap();
        let codes = rvq_encode(model, &pair.input).unwrap();
        let dim = pair.input.dim();
        let frames = pair.input.len();
        let mut sq = 0.0;
        for t in 0..frames {
            let mut recon = vec![0.0; dim];
            for k in 0..model.stages() {
                let m = match alloc {
                    Allocation::FullDepth => 1.0,
                    Allocation::Scaled(l) => soft_step(l * p.values()[t], k, alpha),
                };
                let q = model.codebook(k).row(codes.get(k, t) as usize);
                for (r, v) in recon.iter_mut().zip(q) {
                    *r += m * v;
                }
            }
            sq += pair.target.frame(t).iter().zip(&recon).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        let rate = match alloc {
            Allocation::FullDepth => 0.0,
            Allocation::Scaled(_) => p.values().iter().sum::<f64>() / frames as f64,
        };
        total += sq / (dim * frames) as f64 + lambda * rate;
    }
    total / batch.len() as f64
}
