//! Spatial resampling as a separable linear map.
//!
//! Each mode is described per axis by, for every output index, the list of
//! contributing input indices and their weights. Bilinear interpolation uses
//! the align-corners-false convention: output pixel `o` samples input
//! coordinate `(o + 0.5) * in / out - 0.5`, clamped at the low border.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::real::math;
use crate::real::Real;
use crate::tensor::{dims4, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleMode {
    Bilinear,
    Nearest,
    AdaptiveAvg,
}

type AxisTaps<T> = Vec<Vec<(usize, T)>>;

#[derive(Clone, Debug)]
pub(crate) struct ResamplePlan<T> {
    rows: AxisTaps<T>,
    cols: AxisTaps<T>,
}

fn axis_taps<T: Real>(input: usize, output: usize, mode: ResampleMode) -> AxisTaps<T> {
    (0..output)
        .map(|o| match mode {
            ResampleMode::Bilinear => {
                if input == output {
                    return vec![(o, T::one())];
                }
                let scale = input as f64 / output as f64;
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (math::floor(src) as usize).min(input - 1);
                let i1 = (i0 + 1).min(input - 1);
                let l1 = src - i0 as f64;
                if i0 == i1 || l1 == 0.0 {
                    vec![(i0, T::one())]
                } else {
                    vec![(i0, T::cst(1.0 - l1)), (i1, T::cst(l1))]
                }
            }
            ResampleMode::Nearest => {
                let src = ((o * input) / output).min(input - 1);
                vec![(src, T::one())]
            }
            ResampleMode::AdaptiveAvg => {
                let start = (o * input) / output;
                let end = ((o + 1) * input).div_ceil(output);
                let w = T::cst(1.0 / (end - start) as f64);
                (start..end).map(|i| (i, w)).collect()
            }
        })
        .collect()
}

fn apply<T: Real>(x: &[T], planes: usize, h: usize, w: usize, rows: &AxisTaps<T>, cols: &AxisTaps<T>) -> Vec<T> {
    let (oh, ow) = (rows.len(), cols.len());
    let mut tmp = vec![T::zero(); h * ow];
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for (ox, taps) in cols.iter().enumerate() {
                tmp[y * ow + ox] = taps.iter().map(|&(ix, wt)| src[y * w + ix] * wt).sum();
            }
        }
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, taps) in rows.iter().enumerate() {
            for &(iy, wt) in taps {
                for ox in 0..ow {
                    dst[oy * ow + ox] += tmp[iy * ow + ox] * wt;
                }
            }
        }
    }
    out
}

fn apply_transpose<T: Real>(
    g: &[T],
    planes: usize,
    h: usize,
    w: usize,
    rows: &AxisTaps<T>,
    cols: &AxisTaps<T>,
) -> Vec<T> {
    let (oh, ow) = (rows.len(), cols.len());
    let mut tmp = vec![T::zero(); h * ow];
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let gp = &g[p * oh * ow..(p + 1) * oh * ow];
        tmp.fill(T::zero());
        for (oy, taps) in rows.iter().enumerate() {
            for &(iy, wt) in taps {
                for ox in 0..ow {
                    tmp[iy * ow + ox] += gp[oy * ow + ox] * wt;
                }
            }
        }
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for (ox, taps) in cols.iter().enumerate() {
                let v = tmp[y * ow + ox];
                for &(ix, wt) in taps {
                    dst[y * w + ix] += v * wt;
                }
            }
        }
    }
    out
}

/// Resamples a [B,C,H,W] tensor to `target = (height, width)` without recording.
pub fn resample_tensor<T: Real>(x: &Tensor<T>, target: (usize, usize), mode: ResampleMode) -> Result<Tensor<T>> {
    let (b, c, h, w) = dims4(x.shape(), "resample")?;
    let plan = make_plan(h, w, target, mode)?;
    Tensor::new(&[b, c, target.0, target.1], apply(x.data(), b * c, h, w, &plan.rows, &plan.cols))
}

fn make_plan<T: Real>(h: usize, w: usize, target: (usize, usize), mode: ResampleMode) -> Result<ResamplePlan<T>> {
    if target.0 == 0 || target.1 == 0 || h == 0 || w == 0 {
        return Err(shape_err("resample", format!("cannot resample {}x{} to {}x{}", h, w, target.0, target.1)));
    }
    Ok(ResamplePlan { rows: axis_taps(h, target.0, mode), cols: axis_taps(w, target.1, mode) })
}

impl<T: Real> Graph<T> {
    pub fn resample(&mut self, x: Var, target: (usize, usize), mode: ResampleMode) -> Result<Var> {
        let (b, c, h, w) = dims4(self.shape(x), "resample")?;
        let plan = make_plan(h, w, target, mode)?;
        let data = apply(self.value(x).data(), b * c, h, w, &plan.rows, &plan.cols);
        let out = Tensor::new(&[b, c, target.0, target.1], data)?;
        Ok(self.push(out, Op::Resample { input: x, plan }))
    }
}

pub(crate) fn backward<T: Real>(
    graph: &Graph<T>,
    input: Var,
    plan: &ResamplePlan<T>,
    g: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let s = graph.shape(input);
    let (b, c, h, w) = dims4(s, "resample").expect("4-D");
    let dx = apply_transpose(g.data(), b * c, h, w, &plan.rows, &plan.cols);
    sink.add(input, Tensor::new(s, dx).expect("shape"));
}
