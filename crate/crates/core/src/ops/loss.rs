//! Fused loss nodes: mean binary cross-entropy and soft IoU loss on
//! probability maps against a constant target.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Images in a prediction tensor: the leading axis of a 4-D tensor, otherwise one.
fn image_count(shape: &[usize]) -> usize {
    if shape.len() == 4 {
        shape[0]
    } else {
        1
    }
}

fn check_target<T: Real>(graph: &Graph<T>, pred: Var, target: &Tensor<T>, op: &'static str) -> Result<()> {
    if graph.shape(pred) != target.shape() {
        return Err(shape_err(op, format!("prediction {:?} vs target {:?}", graph.shape(pred), target.shape())));
    }
    Ok(())
}

/// Per-image `(intersection, union)` sums.
pub(crate) fn iou_terms<T: Real>(p: &[T], g: &[T], images: usize) -> (Vec<T>, Vec<T>) {
    let per = p.len() / images;
    let mut inter = vec![T::zero(); images];
    let mut union = vec![T::zero(); images];
    for i in 0..images {
        for (&pv, &gv) in p[i * per..(i + 1) * per].iter().zip(&g[i * per..(i + 1) * per]) {
            inter[i] += pv * gv;
            union[i] += pv + gv - pv * gv;
        }
    }
    (inter, union)
}

/// Clamp that lets NaN through, so a poisoned prediction shows up in the loss.
fn clamp_nan<T: Real>(v: T, lo: T, hi: T) -> T {
    if v.is_nan() {
        v
    } else {
        v.max(lo).min(hi)
    }
}

fn floor_nan<T: Real>(v: T, lo: T) -> T {
    if v.is_nan() {
        v
    } else {
        v.max(lo)
    }
}

impl<T: Real> Graph<T> {
    /// Mean binary cross-entropy with predictions clamped to `[eps, 1 - eps]`.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor<T>, eps: T) -> Result<Var> {
        check_target(self, pred, target, "bce_loss")?;
        let p = self.value(pred).data();
        let hi = T::one() - eps;
        let total: T = p
            .iter()
            .zip(target.data())
            .map(|(&p, &g)| {
                let p = clamp_nan(p, eps, hi);
                -(g * p.ln() + (T::one() - g) * (T::one() - p).ln())
            })
            .sum();
        let out = Tensor::scalar(total / T::cst(p.len() as f64));
        Ok(self.push(out, Op::Bce { pred, target: target.clone(), eps }))
    }

    /// Soft IoU loss `1 - sum(PG) / sum(P + G - PG)`, averaged over images.
    /// The union is floored at `eps`.
    pub fn iou_loss(&mut self, pred: Var, target: &Tensor<T>, eps: T) -> Result<Var> {
        check_target(self, pred, target, "iou_loss")?;
        let images = image_count(target.shape());
        let (inter, union) = iou_terms(self.value(pred).data(), target.data(), images);
        let loss: T = inter.iter().zip(&union).map(|(&i, &u)| T::one() - i / floor_nan(u, eps)).sum::<T>()
            / T::cst(images as f64);
        let out = Tensor::scalar(loss);
        Ok(self.push(out, Op::Iou { pred, target: target.clone(), inter, union, eps }))
    }
}

pub(crate) fn backward_bce<T: Real>(
    graph: &Graph<T>,
    pred: Var,
    target: &Tensor<T>,
    eps: T,
    g: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let p = graph.value(pred);
    let scale = g.item() / T::cst(p.len() as f64);
    let hi = T::one() - eps;
    let dx = p
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| if p < eps || p > hi { T::zero() } else { scale * (-t / p + (T::one() - t) / (T::one() - p)) })
        .collect();
    sink.add(pred, Tensor::new(p.shape(), dx).expect("shape"));
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_iou<T: Real>(
    graph: &Graph<T>,
    pred: Var,
    target: &Tensor<T>,
    inter: &[T],
    union: &[T],
    eps: T,
    g: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let p = graph.value(pred);
    let images = inter.len();
    let per = p.len() / images;
    let scale = g.item() / T::cst(images as f64);
    let mut dx = vec![T::zero(); p.len()];
    for i in 0..images {
        let u = union[i];
        for (k, d) in dx[i * per..(i + 1) * per].iter_mut().enumerate() {
            let t = target.data()[i * per + k];
            *d = if u > eps {
                -scale * (t * u - inter[i] * (T::one() - t)) / (u * u)
            } else {
                // floored denominator is constant
                -scale * t / eps
            };
        }
    }
    sink.add(pred, Tensor::new(p.shape(), dx).expect("shape"));
}
