//! Straight-line reference implementations of the evaluation metrics, plus a
//! random pair generator. Everything here works pixel by pixel with no
//! shared code from the library.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Grid {
    pub w: usize,
    pub h: usize,
    pub p: Vec<f64>,
    pub g: Vec<f64>,
}

impl Grid {
    fn at(v: &[f64], w: usize, r: usize, c: usize) -> f64 {
        v[r * w + c]
    }

    pub fn transposed(&self) -> Grid {
        let t = |v: &[f64]| {
            let mut out = vec![0.0; v.len()];
            for r in 0..self.h {
                for c in 0..self.w {
                    out[c * self.h + r] = v[r * self.w + c];
                }
            }
            out
        };
        Grid { w: self.h, h: self.w, p: t(&self.p), g: t(&self.g) }
    }
}

/// Random pairs up to 16x16: quantized or continuous predictions, noisy or
/// blob-shaped masks, with empty and full masks mixed in.
pub fn random_grids(count: usize, seed: u64) -> Vec<Grid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let w = rng.random_range(1..=16);
            let h = rng.random_range(1..=16);
            let n = w * h;
            let g: Vec<f64> = match i % 8 {
                6 => vec![0.0; n],
                7 => vec![1.0; n],
                k if k % 2 == 0 => {
                    let (cy, cx) = (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64);
                    let rad = rng.random_range(1.0..6.0f64);
                    (0..n)
                        .map(|j| {
                            let (y, x) = ((j / w) as f64, (j % w) as f64);
                            if (y - cy).powi(2) + (x - cx).powi(2) <= rad * rad {
                                1.0
                            } else {
                                0.0
                            }
                        })
                        .collect()
                }
                _ => {
                    let d = rng.random_range(0.1..0.7);
                    (0..n).map(|_| if rng.random_bool(d) { 1.0 } else { 0.0 }).collect()
                }
            };
            let p: Vec<f64> = if i % 3 == 0 {
                (0..n).map(|_| rng.random_range(0..=255u32) as f64 / 255.0).collect()
            } else if i % 3 == 1 {
                g.iter().map(|&v| (0.7 * v + 0.3 * rng.random::<f64>()).clamp(0.0, 1.0)).collect()
            } else {
                (0..n).map(|_| rng.random::<f64>()).collect()
            };
            Grid { w, h, p, g }
        })
        .collect()
}

pub fn mae(x: &Grid) -> f64 {
    let mut s = 0.0;
    for i in 0..x.p.len() {
        s += (x.p[i] - x.g[i]).abs();
    }
    s / x.p.len() as f64
}

/// Fraction of foreground pixels with prediction at or below `thr`.
pub fn fnr(x: &Grid, thr: f64) -> Option<f64> {
    let fg: Vec<usize> = (0..x.g.len()).filter(|&i| x.g[i] == 1.0).collect();
    if fg.is_empty() {
        return None;
    }
    Some(fg.iter().filter(|&&i| x.p[i] <= thr).count() as f64 / fg.len() as f64)
}

/// Precision, recall and F curves for `P > t / 255`.
pub fn curves(x: &Grid, beta2: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mut pr, mut rc, mut f) = (vec![], vec![], vec![]);
    for t in 0..256 {
        let thr = t as f64 / 255.0;
        let (mut tp, mut fp, mut pos) = (0.0, 0.0, 0.0);
        for i in 0..x.p.len() {
            let on = x.p[i] > thr;
            if x.g[i] == 1.0 {
                pos += 1.0;
                if on {
                    tp += 1.0;
                }
            } else if on {
                fp += 1.0;
            }
        }
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if pos > 0.0 { tp / pos } else { 0.0 };
        let fv = if beta2 * p + r > 0.0 { (1.0 + beta2) * p * r / (beta2 * p + r) } else { 0.0 };
        pr.push(p);
        rc.push(r);
        f.push(fv);
    }
    (pr, rc, f)
}

pub fn e_measure_curve(x: &Grid) -> Vec<f64> {
    let n = x.p.len() as f64;
    (0..256)
        .map(|t| {
            let f: Vec<f64> = x.p.iter().map(|&v| if v > t as f64 / 255.0 { 1.0 } else { 0.0 }).collect();
            let sum_g: f64 = x.g.iter().sum();
            let sum_f: f64 = f.iter().sum();
            if sum_g == 0.0 {
                return f.iter().map(|v| 1.0 - v).sum::<f64>() / n;
            }
            if sum_g == n {
                return sum_f / n;
            }
            let (mf, mg) = (sum_f / n, sum_g / n);
            let mut total = 0.0;
            for i in 0..f.len() {
                let (af, ag) = (f[i] - mf, x.g[i] - mg);
                let xi = 2.0 * ag * af / (ag * ag + af * af);
                total += (1.0 + xi) * (1.0 + xi) / 4.0;
            }
            total / n
        })
        .collect()
}

pub fn e_measure(x: &Grid) -> f64 {
    e_measure_curve(x).iter().sum::<f64>() / 256.0
}

/// Weighted F-measure with brute-force nearest-foreground search. Among
/// equidistant nearest foreground pixels the smallest error is taken.
pub fn wfm(x: &Grid, beta2: f64) -> Option<f64> {
    let (w, h) = (x.w, x.h);
    let fg: Vec<(usize, usize)> =
        (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).filter(|&(r, c)| Grid::at(&x.g, w, r, c) == 1.0).collect();
    if fg.is_empty() {
        return None;
    }
    let err = |r: usize, c: usize| (Grid::at(&x.p, w, r, c) - Grid::at(&x.g, w, r, c)).abs();
    let mut et = vec![vec![0.0; w]; h];
    let mut dist = vec![vec![0.0; w]; h];
    for r in 0..h {
        for c in 0..w {
            if Grid::at(&x.g, w, r, c) == 1.0 {
                et[r][c] = err(r, c);
                continue;
            }
            let mut best = (i64::MAX, f64::INFINITY);
            for &(fr, fc) in &fg {
                let d = (fr as i64 - r as i64).pow(2) + (fc as i64 - c as i64).pow(2);
                let e = err(fr, fc);
                if d < best.0 || (d == best.0 && e < best.1) {
                    best = (d, e);
                }
            }
            et[r][c] = best.1;
            dist[r][c] = (best.0 as f64).sqrt();
        }
    }
    let mut kern = [[0.0f64; 7]; 7];
    let mut ks = 0.0;
    for (i, row) in kern.iter_mut().enumerate() {
        for (j, k) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 3.0, j as f64 - 3.0);
            *k = (-(dx * dx + dy * dy) / 50.0).exp();
            ks += *k;
        }
    }
    let mut padded = vec![vec![0.0; w + 6]; h + 6];
    for r in 0..h {
        for c in 0..w {
            padded[r + 3][c + 3] = et[r][c];
        }
    }
    let (mut sum_fg, mut fp) = (0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            let mut ea = 0.0;
            for i in 0..7 {
                for j in 0..7 {
                    ea += kern[i][j] / ks * padded[r + i][c + j];
                }
            }
            if Grid::at(&x.g, w, r, c) == 1.0 {
                sum_fg += ea.min(err(r, c));
            } else {
                fp += err(r, c) * (2.0 - (0.5f64.ln() / 5.0 * dist[r][c]).exp());
            }
        }
    }
    let n = fg.len() as f64;
    let tp = n - sum_fg;
    let recall = 1.0 - sum_fg / n;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let den = recall + beta2 * precision;
    Some(if den > 0.0 { (1.0 + beta2) * recall * precision / den } else { 0.0 })
}

fn stats(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    (m, (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let (x, _) = stats(p);
    let (y, _) = stats(g);
    let mut cov = 0.0;
    let (mut vx, mut vy) = (0.0, 0.0);
    for i in 0..p.len() {
        cov += (p[i] - x) * (g[i] - y);
        vx += (p[i] - x).powi(2);
        vy += (g[i] - y).powi(2);
    }
    let d = n - 1.0 + f64::EPSILON;
    let (cov, vx, vy) = (cov / d, vx / d, vy / d);
    let a = 4.0 * x * y * cov;
    let b = (x * x + y * y) * (vx + vy);
    if a != 0.0 {
        a / (b + f64::EPSILON)
    } else if b == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn s_measure(x: &Grid, alpha: f64) -> f64 {
    let (w, h) = (x.w, x.h);
    let n = (w * h) as f64;
    let gm = x.g.iter().sum::<f64>() / n;
    let pm = x.p.iter().sum::<f64>() / n;
    if gm == 0.0 {
        return 1.0 - pm;
    }
    if gm == 1.0 {
        return pm;
    }
    let score = |v: &[f64]| {
        if v.is_empty() {
            return 0.0;
        }
        let (m, sd) = stats(v);
        2.0 * m / (m * m + 1.0 + sd + f64::EPSILON)
    };
    let fg: Vec<f64> = (0..x.p.len()).filter(|&i| x.g[i] == 1.0).map(|i| x.p[i]).collect();
    let bg: Vec<f64> = (0..x.p.len()).filter(|&i| x.g[i] == 0.0).map(|i| 1.0 - x.p[i]).collect();
    let obj = gm * score(&fg) + (1.0 - gm) * score(&bg);

    let (mut sx, mut sy, mut cnt) = (0.0, 0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            if Grid::at(&x.g, w, r, c) == 1.0 {
                sx += (c + 1) as f64;
                sy += (r + 1) as f64;
                cnt += 1.0;
            }
        }
    }
    let cx = (sx / cnt).round() as usize;
    let cy = (sy / cnt).round() as usize;
    let mut reg = 0.0;
    for (r0, r1) in [(0, cy), (cy, h)] {
        for (c0, c1) in [(0, cx), (cx, w)] {
            if r1 <= r0 || c1 <= c0 {
                continue;
            }
            let (mut bp, mut bg) = (vec![], vec![]);
            for r in r0..r1 {
                for c in c0..c1 {
                    bp.push(Grid::at(&x.p, w, r, c));
                    bg.push(Grid::at(&x.g, w, r, c));
                }
            }
            reg += (bp.len() as f64 / n) * ssim(&bp, &bg);
        }
    }
    (alpha * obj + (1.0 - alpha) * reg).max(0.0)
}
