//! Weighted F-measure.
//!
//! `E = |P - G|`. Background errors are replaced by the error at the nearest
//! foreground pixel and the result is smoothed with a normalised 7x7
//! Gaussian (sigma 5, zero padding); inside `G` the smaller of the raw and
//! smoothed error is kept. Background pixels are then weighted by
//! `2 - exp(ln(0.5) / 5 * d)`, `d` the distance to `G`:
//!
//! `R = 1 - mean(Ew[G])`, `P = TPw / (TPw + FPw)`,
//! `F = (1 + b2) R P / (R + b2 P)` where a zero denominator yields 0.

use alloc::vec;
use alloc::vec::Vec;

use super::edt::edt_with_values;
use super::EvalPair;
use crate::real::math;

pub const KERNEL_SIZE: usize = 7;
pub const KERNEL_SIGMA: f64 = 5.0;

/// Normalised `KERNEL_SIZE x KERNEL_SIZE` Gaussian, row-major.
pub fn gaussian_kernel() -> Vec<f64> {
    let half = (KERNEL_SIZE / 2) as isize;
    let mut k: Vec<f64> = (0..KERNEL_SIZE * KERNEL_SIZE)
        .map(|i| {
            let (y, x) = ((i / KERNEL_SIZE) as isize - half, (i % KERNEL_SIZE) as isize - half);
            math::exp(-((x * x + y * y) as f64) / (2.0 * KERNEL_SIGMA * KERNEL_SIGMA))
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Same-size correlation with zero padding.
pub fn filter_same(src: &[f64], width: usize, height: usize, kernel: &[f64], ksize: usize) -> Vec<f64> {
    let half = (ksize / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for r in 0..height as isize {
        for c in 0..width as isize {
            let mut acc = 0.0;
            for ky in 0..ksize as isize {
                let y = r + ky - half;
                if y < 0 || y >= height as isize {
                    continue;
                }
                for kx in 0..ksize as isize {
                    let x = c + kx - half;
                    if x < 0 || x >= width as isize {
                        continue;
                    }
                    acc += kernel[(ky as usize) * ksize + kx as usize] * src[y as usize * width + x as usize];
                }
            }
            out[r as usize * width + c as usize] = acc;
        }
    }
    out
}

/// Returns `(score, empty_gt)`; an empty mask scores 0.
pub fn weighted_fmeasure(pair: &EvalPair<'_>, beta2: f64) -> (f64, bool) {
    let (w, h) = (pair.width, pair.height);
    let g: Vec<bool> = pair.g.iter().map(|&v| v > 0.5).collect();
    let n_fg = g.iter().filter(|&&b| b).count();
    if n_fg == 0 {
        return (0.0, true);
    }
    let e: Vec<f64> = pair.p.iter().zip(pair.g).map(|(&p, &gv)| (p - gv).abs()).collect();
    let dt = edt_with_values(&g, &e, w, h);
    let et: Vec<f64> = (0..e.len()).map(|i| if g[i] { e[i] } else { dt.nearest_value[i] }).collect();
    let ea = filter_same(&et, w, h, &gaussian_kernel(), KERNEL_SIZE);
    let decay = math::ln(0.5) / 5.0;
    let mut sum_fg = 0.0;
    let mut fp = 0.0;
    for i in 0..e.len() {
        if g[i] {
            sum_fg += if ea[i] < e[i] { ea[i] } else { e[i] };
        } else {
            let b = 2.0 - math::exp(decay * dt.distance(i));
            fp += e[i] * b;
        }
    }
    let tp = n_fg as f64 - sum_fg;
    let r = 1.0 - sum_fg / n_fg as f64;
    let p = guarded_div(tp, tp + fp);
    (guarded_div((1.0 + beta2) * r * p, r + beta2 * p), false)
}

fn guarded_div(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}
