//! 2-D convolution (cross-correlation) via im2col and GEMM.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::real::Real;
use crate::tensor::{dims4, Tensor};

/// Stride, zero padding and dilation per spatial axis, as `(vertical, horizontal)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl ConvGeom {
    pub fn square(stride: usize, padding: usize, dilation: usize) -> Self {
        Self { stride: (stride, stride), padding: (padding, padding), dilation: (dilation, dilation) }
    }

    pub fn with_padding(stride: usize, padding: (usize, usize)) -> Self {
        Self { stride: (stride, stride), padding, dilation: (1, 1) }
    }

    fn is_pointwise(&self, kh: usize, kw: usize) -> bool {
        kh == 1 && kw == 1 && self.stride == (1, 1) && self.padding == (0, 0)
    }

    /// Output extent along one axis, or `None` when the kernel does not fit.
    pub fn out_extent(input: usize, kernel: usize, stride: usize, padding: usize, dilation: usize) -> Option<usize> {
        let span = dilation * (kernel - 1) + 1;
        let padded = input + 2 * padding;
        if kernel == 0 || stride == 0 || span > padded {
            None
        } else {
            Some((padded - span) / stride + 1)
        }
    }
}

struct Dims {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

impl Dims {
    fn ck(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn hw_out(&self) -> usize {
        self.ho * self.wo
    }
}

fn conv_dims(input: &[usize], weight: &[usize], geom: &ConvGeom) -> Result<Dims> {
    let (b, c, h, w) = dims4(input, "conv2d")?;
    let (o, ci, kh, kw) = dims4(weight, "conv2d")?;
    if ci != c {
        return Err(shape_err(
            "conv2d",
            format!("input channel axis has {} but kernel expects {} (kernel {:?})", c, ci, weight),
        ));
    }
    if geom.dilation.0 == 0 || geom.dilation.1 == 0 || geom.stride.0 == 0 || geom.stride.1 == 0 {
        return Err(shape_err("conv2d", format!("stride and dilation must be >= 1, got {:?}", geom)));
    }
    let ho = ConvGeom::out_extent(h, kh, geom.stride.0, geom.padding.0, geom.dilation.0);
    let wo = ConvGeom::out_extent(w, kw, geom.stride.1, geom.padding.1, geom.dilation.1);
    match (ho, wo) {
        (Some(ho), Some(wo)) => Ok(Dims { b, c, h, w, o, kh, kw, ho, wo }),
        _ => Err(shape_err(
            "conv2d",
            format!(
                "kernel {}x{} (dilation {:?}) exceeds padded input height/width {}x{}",
                kh,
                kw,
                geom.dilation,
                h + 2 * geom.padding.0,
                w + 2 * geom.padding.1
            ),
        )),
    }
}

fn im2col<T: Real>(x: &[T], d: &Dims, geom: &ConvGeom, cols: &mut [T]) {
    let hw = d.hw_out();
    for c in 0..d.c {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..d.ho {
                    let iy = (oy * geom.stride.0 + ky * geom.dilation.0) as isize - geom.padding.0 as isize;
                    let line = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    if iy < 0 || iy >= d.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * d.h + iy as usize) * d.w..][..d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * geom.stride.1 + kx * geom.dilation.1) as isize - geom.padding.1 as isize;
                        *v = if ix < 0 || ix >= d.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], d: &Dims, geom: &ConvGeom, dx: &mut [T]) {
    let hw = d.hw_out();
    for c in 0..d.c {
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..d.ho {
                    let iy = (oy * geom.stride.0 + ky * geom.dilation.0) as isize - geom.padding.0 as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * d.h + iy as usize) * d.w..][..d.w];
                    for ox in 0..d.wo {
                        let ix = (ox * geom.stride.1 + kx * geom.dilation.1) as isize - geom.padding.1 as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution on raw buffers. `bias`, when given, has one entry per
/// output channel.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: &ConvGeom,
) -> Result<Tensor<T>> {
    let d = conv_dims(input.shape(), weight.shape(), geom)?;
    if let Some(bias) = bias {
        if bias.len() != d.o {
            return Err(shape_err("conv2d", format!("bias has {} entries for {} output channels", bias.len(), d.o)));
        }
    }
    let (ck, hw) = (d.ck(), d.hw_out());
    let mut out = vec![T::zero(); d.b * d.o * hw];
    let pointwise = geom.is_pointwise(d.kh, d.kw);
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); ck * hw] };
    let x = input.data();
    for b in 0..d.b {
        let xb = &x[b * d.c * d.h * d.w..(b + 1) * d.c * d.h * d.w];
        let colsb: &[T] = if pointwise {
            xb
        } else {
            im2col(xb, &d, geom, &mut cols);
            &cols
        };
        let ob = &mut out[b * d.o * hw..(b + 1) * d.o * hw];
        if let Some(bias) = bias {
            for (o, chunk) in ob.chunks_mut(hw).enumerate() {
                chunk.fill(bias.data()[o]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(d.o, ck, hw, T::one(), weight.data(), ck as isize, 1, colsb, hw as isize, 1, beta, ob, hw as isize, 1);
    }
    Tensor::new(&[d.b, d.o, d.ho, d.wo], out)
}

impl<T: Real> Graph<T> {
    /// Cross-correlation of `input` [B,C,H,W] with `weight` [O,C,kh,kw].
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let out = conv2d_forward(self.value(input), self.value(weight), bias.map(|b| self.value(b)), &geom)?;
        Ok(self.push(out, Op::Conv2d { input, weight, bias, geom }))
    }
}

pub(crate) fn backward<T: Real>(
    graph: &Graph<T>,
    input: Var,
    weight: Var,
    bias: Option<Var>,
    geom: ConvGeom,
    g: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let x = graph.value(input);
    let wt = graph.value(weight);
    let d = conv_dims(x.shape(), wt.shape(), &geom).expect("validated in forward");
    let (ck, hw, chw) = (d.ck(), d.hw_out(), d.c * d.h * d.w);
    let want_x = sink.wants(input);
    let want_w = sink.wants(weight);
    let pointwise = geom.is_pointwise(d.kh, d.kw);
    let mut dx = if want_x { vec![T::zero(); x.len()] } else { Vec::new() };
    let mut dw = if want_w { vec![T::zero(); wt.len()] } else { Vec::new() };
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); ck * hw] };
    let mut dcols = if want_x && !pointwise { vec![T::zero(); ck * hw] } else { Vec::new() };
    for b in 0..d.b {
        let gb = &g.data()[b * d.o * hw..(b + 1) * d.o * hw];
        let xb = &x.data()[b * chw..(b + 1) * chw];
        if want_w {
            let colsb: &[T] = if pointwise {
                xb
            } else {
                im2col(xb, &d, &geom, &mut cols);
                &cols
            };
            // dW[o, r] += sum_p g[o, p] * cols[r, p]
            T::gemm(
                d.o,
                hw,
                ck,
                T::one(),
                gb,
                hw as isize,
                1,
                colsb,
                1,
                hw as isize,
                T::one(),
                &mut dw,
                ck as isize,
                1,
            );
        }
        if want_x {
            // dcols[r, p] = sum_o W[o, r] * g[o, p]
            if pointwise {
                let dxb = &mut dx[b * chw..(b + 1) * chw];
                T::gemm(
                    ck,
                    d.o,
                    hw,
                    T::one(),
                    wt.data(),
                    1,
                    ck as isize,
                    gb,
                    hw as isize,
                    1,
                    T::one(),
                    dxb,
                    hw as isize,
                    1,
                );
            } else {
                T::gemm(
                    ck,
                    d.o,
                    hw,
                    T::one(),
                    wt.data(),
                    1,
                    ck as isize,
                    gb,
                    hw as isize,
                    1,
                    T::zero(),
                    &mut dcols,
                    hw as isize,
                    1,
                );
                col2im(&dcols, &d, &geom, &mut dx[b * chw..(b + 1) * chw]);
            }
        }
    }
    if want_x {
        sink.add(input, Tensor::new(x.shape(), dx).expect("shape"));
    }
    if want_w {
        sink.add(weight, Tensor::new(wt.shape(), dw).expect("shape"));
    }
    if let Some(bias) = bias {
        if sink.wants(bias) {
            let mut db = vec![T::zero(); d.o];
            for b in 0..d.b {
                for (o, acc) in db.iter_mut().enumerate() {
                    *acc += g.data()[(b * d.o + o) * hw..(b * d.o + o + 1) * hw].iter().copied().sum();
                }
            }
            sink.add(bias, Tensor::new(&[d.o], db).expect("shape"));
        }
    }
}
