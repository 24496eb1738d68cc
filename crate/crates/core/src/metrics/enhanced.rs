//! Mean enhanced-alignment measure.
//!
//! For a binary prediction `F` and mask `G`, both are centred by their means
//! and `xi = 2 aG aF / (aG^2 + aF^2)`, `theta = (1 + xi)^2 / 4`; the score is
//! `mean(theta)`. An empty mask uses `theta = 1 - F`, a full mask
//! `theta = F`. The mean E-measure averages the score over the 256
//! binarizations `P > t / 255`.
//!
//! A binary pair has only four distinct `(F, G)` combinations, so every
//! threshold is scored from pixel counts.

use super::{threshold_counts, EvalPair, THRESHOLDS};

/// Score of one binarization given its confusion counts.
pub fn enhanced_alignment(tp: usize, fp: usize, fn_: usize, tn: usize) -> f64 {
    let n = (tp + fp + fn_ + tn) as f64;
    let n_g = tp + fn_;
    let n_f = tp + fp;
    if n_g == 0 {
        return 1.0 - n_f as f64 / n;
    }
    if n_g == tp + fp + fn_ + tn {
        return n_f as f64 / n;
    }
    let mu_f = n_f as f64 / n;
    let mu_g = n_g as f64 / n;
    let theta = |f: f64, g: f64| {
        let (af, ag) = (f - mu_f, g - mu_g);
        let xi = 2.0 * ag * af / (ag * ag + af * af);
        (1.0 + xi) * (1.0 + xi) / 4.0
    };
    (tp as f64 * theta(1.0, 1.0)
        + fp as f64 * theta(1.0, 0.0)
        + fn_ as f64 * theta(0.0, 1.0)
        + tn as f64 * theta(0.0, 0.0))
        / n
}

/// Per-threshold scores, `t = 0..=255`.
pub fn e_measure_curve(pair: &EvalPair<'_>) -> [f64; THRESHOLDS] {
    let c = threshold_counts(pair);
    core::array::from_fn(|t| enhanced_alignment(c.tp[t], c.fp[t], c.n_fg - c.tp[t], c.n_bg - c.fp[t]))
}

pub fn e_measure_mean(pair: &EvalPair<'_>) -> f64 {
    e_measure_curve(pair).iter().sum::<f64>() / THRESHOLDS as f64
}
