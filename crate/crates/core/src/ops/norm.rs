//! Batch normalization (per channel over batch and space) and layer
//! normalization (over channels at each spatial site).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::graph::{GradSink, Graph, Op, Var};
use crate::real::Real;
use crate::tensor::{dims4, Tensor};

pub const NORM_EPS: f64 = 1e-5;

/// Where batch normalization takes its statistics from.
#[derive(Clone, Copy, Debug)]
pub enum BnStats<'a, T> {
    /// Mini-batch statistics (training mode).
    Batch,
    /// Stored running averages (inference mode).
    Running { mean: &'a [T], var: &'a [T] },
}

/// Mini-batch statistics observed by a training-mode batch norm. `var` is
/// the unbiased estimate, ready to be folded into running averages.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

fn check_affine<T: Real>(graph: &Graph<T>, gamma: Var, beta: Var, c: usize, op: &'static str) -> Result<()> {
    for (name, v) in [("gamma", gamma), ("beta", beta)] {
        if graph.shape(v) != [c] {
            return Err(shape_err(op, format!("{} has shape {:?}, expected [{}]", name, graph.shape(v), c)));
        }
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: BnStats<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (b, c, h, w) = dims4(self.shape(x), "batch_norm")?;
        check_affine(self, gamma, beta, c, "batch_norm")?;
        let hw = h * w;
        let n = b * hw;
        let xs = self.value(x).data();
        let eps = T::cst(NORM_EPS);
        let (mean, var, observed) = match stats {
            BnStats::Batch => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for bi in 0..b {
                        s += xs[(bi * c + ch) * hw..][..hw].iter().copied().sum();
                    }
                    let m = s / T::cst(n as f64);
                    let mut sq = T::zero();
                    for bi in 0..b {
                        for &v in &xs[(bi * c + ch) * hw..][..hw] {
                            sq += (v - m) * (v - m);
                        }
                    }
                    mean[ch] = m;
                    var[ch] = sq / T::cst(n as f64);
                }
                let unbiased =
                    var.iter().map(|&v| if n > 1 { v * T::cst(n as f64 / (n - 1) as f64) } else { v }).collect();
                let observed = BatchStats { mean: mean.clone(), var: unbiased };
                (mean, var, Some(observed))
            }
            BnStats::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(shape_err(
                        "batch_norm",
                        format!("running statistics have {} entries for {} channels", mean.len(), c),
                    ));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gs, bs) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        for bi in 0..b {
            for ch in 0..c {
                let base = (bi * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (xs[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = gs[ch] * xh + bs[ch];
                }
            }
        }
        let out = Tensor::new(&[b, c, h, w], out)?;
        let batch_stats = observed.is_some();
        Ok((self.push(out, Op::BatchNorm { input: x, gamma, beta, xhat, inv_std, batch_stats }), observed))
    }

    /// Normalizes over the channel axis at every (batch, y, x) site.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (b, c, h, w) = dims4(self.shape(x), "layer_norm")?;
        check_affine(self, gamma, beta, c, "layer_norm")?;
        let hw = h * w;
        let xs = self.value(x).data();
        let (gs, bs) = (self.value(gamma).data(), self.value(beta).data());
        let eps = T::cst(NORM_EPS);
        let cn = T::cst(c as f64);
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        let mut inv_std = vec![T::zero(); b * hw];
        for bi in 0..b {
            for s in 0..hw {
                let at = |ch: usize| (bi * c + ch) * hw + s;
                let m = (0..c).map(|ch| xs[at(ch)]).sum::<T>() / cn;
                let v = (0..c).map(|ch| (xs[at(ch)] - m) * (xs[at(ch)] - m)).sum::<T>() / cn;
                let is = T::one() / (v + eps).sqrt();
                inv_std[bi * hw + s] = is;
                for ch in 0..c {
                    let xh = (xs[at(ch)] - m) * is;
                    xhat[at(ch)] = xh;
                    out[at(ch)] = gs[ch] * xh + bs[ch];
                }
            }
        }
        let out = Tensor::new(&[b, c, h, w], out)?;
        Ok(self.push(out, Op::LayerNorm { input: x, gamma, beta, xhat, inv_std }))
    }
}

fn affine_grads<T: Real>(
    gamma: Var,
    beta: Var,
    xhat: &[T],
    g: &Tensor<T>,
    c: usize,
    hw: usize,
    sink: &mut GradSink<'_, T>,
) {
    let mut dg = vec![T::zero(); c];
    let mut db = vec![T::zero(); c];
    for (i, (&gv, &xh)) in g.data().iter().zip(xhat).enumerate() {
        let ch = (i / hw) % c;
        dg[ch] += gv * xh;
        db[ch] += gv;
    }
    sink.add(gamma, Tensor::new(&[c], dg).expect("shape"));
    sink.add(beta, Tensor::new(&[c], db).expect("shape"));
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_batchnorm<T: Real>(
    graph: &Graph<T>,
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    batch_stats: bool,
    g: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let (b, c, h, w) = dims4(g.shape(), "batch_norm").expect("4-D");
    let hw = h * w;
    affine_grads(gamma, beta, xhat, g, c, hw, sink);
    if !sink.wants(input) {
        return;
    }
    let gs = graph.value(gamma).data();
    let gd = g.data();
    let mut dx = vec![T::zero(); gd.len()];
    let n = T::cst((b * hw) as f64);
    for ch in 0..c {
        let idx = (0..b).flat_map(|bi| (bi * c + ch) * hw..(bi * c + ch + 1) * hw);
        if batch_stats {
            let (mut s1, mut s2) = (T::zero(), T::zero());
            for i in idx.clone() {
                let d = gd[i] * gs[ch];
                s1 += d;
                s2 += d * xhat[i];
            }
            for i in idx {
                let d = gd[i] * gs[ch];
                dx[i] = inv_std[ch] / n * (n * d - s1 - xhat[i] * s2);
            }
        } else {
            for i in idx {
                dx[i] = gd[i] * gs[ch] * inv_std[ch];
            }
        }
    }
    sink.add(input, Tensor::new(g.shape(), dx).expect("shape"));
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_layernorm<T: Real>(
    graph: &Graph<T>,
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    g: &Tensor<T>,
    sink: &mut GradSink<'_, T>,
) {
    let (b, c, h, w) = dims4(g.shape(), "layer_norm").expect("4-D");
    let hw = h * w;
    affine_grads(gamma, beta, xhat, g, c, hw, sink);
    if !sink.wants(input) {
        return;
    }
    let gs = graph.value(gamma).data();
    let gd = g.data();
    let mut dx = vec![T::zero(); gd.len()];
    let cn = T::cst(c as f64);
    for bi in 0..b {
        for s in 0..hw {
            let at = |ch: usize| (bi * c + ch) * hw + s;
            let (mut s1, mut s2) = (T::zero(), T::zero());
            for ch in 0..c {
                let d = gd[at(ch)] * gs[ch];
                s1 += d;
                s2 += d * xhat[at(ch)];
            }
            let is = inv_std[bi * hw + s];
            for ch in 0..c {
                let d = gd[at(ch)] * gs[ch];
                dx[at(ch)] = is / cn * (cn * d - s1 - xhat[at(ch)] * s2);
            }
        }
    }
    sink.add(input, Tensor::new(g.shape(), dx).expect("shape"));
}
