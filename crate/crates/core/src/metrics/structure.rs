//! Structure measure `S = m * S_object + (1 - m) * S_region`.
//!
//! Object term: foreground and background similarity `2x / (x^2 + 1 + sd)`
//! of the prediction restricted to each side, weighted by the foreground
//! fraction. Region term: the mask centroid (1-based, rounded half away from
//! zero) splits both maps into four blocks compared with an SSIM variant and
//! weighted by block area. A mask with no foreground scores `1 - mean(P)`,
//! a full mask `mean(P)`; negative scores clamp to 0.

use alloc::vec::Vec;

use super::EvalPair;
use crate::real::math;

pub fn s_measure(pair: &EvalPair<'_>, m: f64) -> f64 {
    let n = pair.p.len() as f64;
    let y = pair.g.iter().sum::<f64>() / n;
    if y == 0.0 {
        return 1.0 - pair.p.iter().sum::<f64>() / n;
    }
    if y == 1.0 {
        return pair.p.iter().sum::<f64>() / n;
    }
    let q = m * s_object(pair) + (1.0 - m) * s_region(pair);
    q.max(0.0)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, math::sqrt(var))
}

fn object(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let (x, sd) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sd + f64::EPSILON)
}

pub fn s_object(pair: &EvalPair<'_>) -> f64 {
    let fg: Vec<f64> = pair.p.iter().zip(pair.g).filter(|(_, &g)| g > 0.5).map(|(&p, _)| p).collect();
    let bg: Vec<f64> = pair.p.iter().zip(pair.g).filter(|(_, &g)| g <= 0.5).map(|(&p, _)| 1.0 - p).collect();
    let u = fg.len() as f64 / pair.p.len() as f64;
    u * object(&fg) + (1.0 - u) * object(&bg)
}

/// Mask centroid `(X, Y)` as 1-based column and row counts: the top-left
/// block spans rows `0..Y` and columns `0..X`.
pub fn centroid(g: &[f64], width: usize, height: usize) -> (usize, usize) {
    let total: f64 = g.iter().sum();
    if total == 0.0 {
        return (round_half_away(width as f64 / 2.0), round_half_away(height as f64 / 2.0));
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for r in 0..height {
        for c in 0..width {
            let v = g[r * width + c];
            sx += v * (c + 1) as f64;
            sy += v * (r + 1) as f64;
        }
    }
    (round_half_away(sx / total), round_half_away(sy / total))
}

fn round_half_away(v: f64) -> usize {
    math::round(v) as usize
}

fn block(src: &[f64], width: usize, rows: (usize, usize), cols: (usize, usize)) -> Vec<f64> {
    let mut out = Vec::with_capacity((rows.1 - rows.0) * (cols.1 - cols.0));
    for r in rows.0..rows.1 {
        out.extend_from_slice(&src[r * width + cols.0..r * width + cols.1]);
    }
    out
}

/// SSIM-style similarity of two equally sized blocks.
pub fn ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let x = p.iter().sum::<f64>() / n;
    let y = g.iter().sum::<f64>() / n;
    let den = n - 1.0 + f64::EPSILON;
    let (mut sx2, mut sy2, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.iter().zip(g) {
        sx2 += (a - x) * (a - x);
        sy2 += (b - y) * (b - y);
        sxy += (a - x) * (b - y);
    }
    let (sx2, sy2, sxy) = (sx2 / den, sy2 / den, sxy / den);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx2 + sy2);
    if alpha != 0.0 {
        alpha / (beta + f64::EPSILON)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn s_region(pair: &EvalPair<'_>) -> f64 {
    let (w, h) = (pair.width, pair.height);
    let (cx, cy) = centroid(pair.g, w, h);
    let area = (w * h) as f64;
    let parts = [((0, cy), (0, cx)), ((0, cy), (cx, w)), ((cy, h), (0, cx)), ((cy, h), (cx, w))];
    let mut q = 0.0;
    for (rows, cols) in parts {
        let size = (rows.1 - rows.0) * (cols.1 - cols.0);
        if size == 0 {
            continue;
        }
        let weight = size as f64 / area;
        q += weight * ssim(&block(pair.p, w, rows, cols), &block(pair.g, w, rows, cols));
    }
    q
}
