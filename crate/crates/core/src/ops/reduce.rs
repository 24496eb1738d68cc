use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::graph::{GradSink, Graph, Op, Var};
use crate::real::Real;
use crate::tensor::{check_axis, dims4, split_at_axis, Tensor};

impl<T: Real> Graph<T> {
    /// Euclidean norm over the spatial positions of each channel:
    /// [B,C,H,W] -> [B,C,1,1]. The gradient at an all-zero channel is zero.
    pub fn spatial_l2_norm(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = dims4(self.shape(x), "spatial_l2_norm")?;
        let hw = h * w;
        let data: Vec<T> =
            self.value(x).data().chunks(hw).map(|plane| plane.iter().map(|&v| v * v).sum::<T>().sqrt()).collect();
        let out = Tensor::new(&[b, c, 1, 1], data)?;
        Ok(self.push(out, Op::SpatialL2(x)))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        check_axis(self.shape(x), axis, "softmax")?;
        let t = self.value(x);
        let (outer, ext, inner) = split_at_axis(t.shape(), axis);
        let src = t.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |e: usize| (o * ext + e) * inner + i;
                let m = (0..ext).map(|e| src[at(e)]).fold(T::neg_infinity(), T::max);
                let mut s = T::zero();
                for e in 0..ext {
                    let v = (src[at(e)] - m).exp();
                    out[at(e)] = v;
                    s += v;
                }
                for e in 0..ext {
                    out[at(e)] /= s;
                }
            }
        }
        let out = Tensor::new(t.shape(), out)?;
        Ok(self.push(out, Op::Softmax { input: x, axis }))
    }
}

pub(crate) fn backward_spatial_l2<T: Real>(
    graph: &Graph<T>,
    x: Var,
    y: &Tensor<T>,
    g: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let t = graph.value(x);
    let (_, _, h, w) = dims4(t.shape(), "spatial_l2_norm").expect("4-D");
    let hw = h * w;
    let mut dx = vec![T::zero(); t.len()];
    for (p, (dst, src)) in dx.chunks_mut(hw).zip(t.data().chunks(hw)).enumerate() {
        let norm = y.data()[p];
        if norm > T::zero() {
            let s = g.data()[p] / norm;
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v * s;
            }
        }
    }
    sink.add(x, Tensor::new(t.shape(), dx).expect("shape"));
}

pub(crate) fn backward_softmax<T: Real>(x: Var, axis: usize, y: &Tensor<T>, g: &Tensor<T>, sink: &mut GradSink<'_, T>) {
    let (outer, ext, inner) = split_at_axis(y.shape(), axis);
    let (yd, gd) = (y.data(), g.data());
    let mut dx = vec![T::zero(); yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |e: usize| (o * ext + e) * inner + i;
            let dot: T = (0..ext).map(|e| gd[at(e)] * yd[at(e)]).sum();
            for e in 0..ext {
                dx[at(e)] = yd[at(e)] * (gd[at(e)] - dot);
            }
        }
    }
    sink.add(x, Tensor::new(y.shape(), dx).expect("shape"));
}
