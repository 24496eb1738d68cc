//! Exact Euclidean distance transform with nearest-foreground value lookup.
//!
//! Two separable passes: per column the nearest foreground row, then per row
//! the lower envelope of the parabolas `(x - c)^2 + g(c)^2`. Envelope
//! breakpoints are kept as exact rationals, so every squared distance is an
//! exact integer and equidistant candidates are found exactly. Among all
//! equidistant nearest foreground pixels the smallest attached value wins,
//! which keeps the result independent of scan direction and of transposing
//! the image.

use crate::real::math;
use alloc::vec;
use alloc::vec::Vec;

/// Squared distance of pixels with no foreground anywhere in the image.
pub const NO_FOREGROUND: u64 = u64::MAX;

/// Result of [`edt_with_values`], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Edt {
    /// Squared distance to the nearest foreground pixel (0 on foreground).
    pub dist2: Vec<u64>,
    /// The smallest value attached to any nearest foreground pixel.
    pub nearest_value: Vec<f64>,
}

impl Edt {
    pub fn distance(&self, i: usize) -> f64 {
        match self.dist2[i] {
            NO_FOREGROUND => f64::INFINITY,
            d => math::sqrt(d as f64),
        }
    }
}

/// Breakpoint `num / den` (den > 0), with the leftmost one at minus infinity.
#[derive(Clone, Copy, Debug)]
enum Break {
    NegInf,
    At(i128, i128),
}

impl Break {
    /// `self < x`
    fn lt_int(self, x: i128) -> bool {
        match self {
            Break::NegInf => true,
            Break::At(n, d) => n < x * d,
        }
    }

    fn eq_int(self, x: i128) -> bool {
        match self {
            Break::NegInf => false,
            Break::At(n, d) => n == x * d,
        }
    }

    /// `a < b`; `b` is never minus infinity.
    fn lt(a: Break, b: (i128, i128)) -> bool {
        match a {
            Break::NegInf => true,
            Break::At(n, d) => n * b.1 < b.0 * d,
        }
    }
}

/// Distance transform of `fg` (row-major `height x width`) that also reports,
/// for every pixel, the minimum of `values` over its nearest foreground
/// pixels.
pub fn edt_with_values(fg: &[bool], values: &[f64], width: usize, height: usize) -> Edt {
    assert_eq!(fg.len(), width * height);
    assert_eq!(values.len(), width * height);
    let n = width * height;
    // column pass: squared row distance and value per pixel
    let mut col_d: Vec<Option<u64>> = vec![None; n];
    let mut col_v = vec![f64::INFINITY; n];
    for c in 0..width {
        let mut up: Vec<Option<usize>> = vec![None; height];
        let mut last = None;
        for r in 0..height {
            if fg[r * width + c] {
                last = Some(r);
            }
            up[r] = last;
        }
        let mut down = None;
        for r in (0..height).rev() {
            if fg[r * width + c] {
                down = Some(r);
            }
            let du = up[r].map(|u| r - u);
            let dd = down.map(|d| d - r);
            let i = r * width + c;
            let (d, v) = match (du, dd) {
                (None, None) => continue,
                (Some(a), None) => (a, values[up[r].unwrap() * width + c]),
                (None, Some(b)) => (b, values[down.unwrap() * width + c]),
                (Some(a), Some(b)) if a < b => (a, values[up[r].unwrap() * width + c]),
                (Some(a), Some(b)) if b < a => (b, values[down.unwrap() * width + c]),
                (Some(a), Some(_)) => (a, values[up[r].unwrap() * width + c].min(values[down.unwrap() * width + c])),
            };
            col_d[i] = Some((d * d) as u64);
            col_v[i] = v;
        }
    }
    let mut dist2 = vec![NO_FOREGROUND; n];
    let mut nearest_value = vec![f64::INFINITY; n];
    let mut cols: Vec<usize> = Vec::with_capacity(width);
    let mut z: Vec<Break> = Vec::with_capacity(width + 1);
    for r in 0..height {
        let row = r * width;
        let f = |c: usize| col_d[row + c].map(|d| d as i128);
        cols.clear();
        z.clear();
        for q in 0..width {
            let Some(fq) = f(q) else { continue };
            loop {
                let Some(&v) = cols.last() else {
                    cols.push(q);
                    z.push(Break::NegInf);
                    break;
                };
                let fv = f(v).expect("envelope holds finite columns");
                let (qi, vi) = (q as i128, v as i128);
                let s = ((fq + qi * qi) - (fv + vi * vi), 2 * (qi - vi));
                // a parabola touching the envelope only at one point stays,
                // so ties at that point are still seen
                if Break::lt(*z.last().expect("same length"), s) || matches_eq(*z.last().unwrap(), s) {
                    cols.push(q);
                    z.push(Break::At(s.0, s.1));
                    break;
                }
                cols.pop();
                z.pop();
            }
        }
        if cols.is_empty() {
            continue;
        }
        let mut k = 0;
        for x in 0..width {
            let xi = x as i128;
            while k + 1 < cols.len() && z[k + 1].lt_int(xi) {
                k += 1;
            }
            let c = cols[k];
            let dx = xi - c as i128;
            let d = (dx * dx + f(c).unwrap()) as u64;
            let mut v = col_v[row + c];
            let mut j = k + 1;
            while j < cols.len() && z[j].eq_int(xi) {
                v = v.min(col_v[row + cols[j]]);
                j += 1;
            }
            dist2[row + x] = d;
            nearest_value[row + x] = v;
        }
    }
    Edt { dist2, nearest_value }
}

fn matches_eq(a: Break, b: (i128, i128)) -> bool {
    match a {
        Break::NegInf => false,
        Break::At(n, d) => n * b.1 == b.0 * d,
    }
}

/// Euclidean distance to the nearest foreground pixel; infinite everywhere
/// when there is no foreground.
pub fn edt(fg: &[bool], width: usize, height: usize) -> Vec<f64> {
    let zeros = vec![0.0; fg.len()];
    let e = edt_with_values(fg, &zeros, width, height);
    (0..fg.len()).map(|i| e.distance(i)).collect()
}
