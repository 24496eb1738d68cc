//! Parameterised building blocks shared by the decoder modules.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::graph::Var;
use crate::ops::norm::BnStats;
use crate::ops::ConvGeom;
use crate::params::{he_normal, Ctx, Mode, ParamId, ParamKind, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Affine batch norm plus its running statistics.
#[derive(Clone, Copy, Debug)]
pub struct BatchNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNormParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(&format!("{prefix}.bn.gamma"), Tensor::ones(&[channels]), ParamKind::Weight),
            beta: store.add(&format!("{prefix}.bn.beta"), Tensor::zeros(&[channels]), ParamKind::Weight),
            running_mean: store.add(
                &format!("{prefix}.bn.running_mean"),
                Tensor::zeros(&[channels]),
                ParamKind::Buffer,
            ),
            running_var: store.add(&format!("{prefix}.bn.running_var"), Tensor::ones(&[channels]), ParamKind::Buffer),
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (ctx.var(self.gamma), ctx.var(self.beta));
        match ctx.mode() {
            Mode::Train => {
                let (y, stats) = ctx.graph.batch_norm(x, gamma, beta, BnStats::Batch)?;
                if let Some(stats) = stats {
                    ctx.record_stats(self.running_mean, self.running_var, stats);
                }
                Ok(y)
            }
            Mode::Eval => {
                let store = ctx.store();
                let stats = BnStats::Running {
                    mean: store.get(self.running_mean).data(),
                    var: store.get(self.running_var).data(),
                };
                Ok(ctx.graph.batch_norm(x, gamma, beta, stats)?.0)
            }
        }
    }
}

/// Layer-norm affine parameters.
#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(&format!("{prefix}.ln.gamma"), Tensor::ones(&[channels]), ParamKind::Weight),
            beta: store.add(&format!("{prefix}.ln.beta"), Tensor::zeros(&[channels]), ParamKind::Weight),
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (ctx.var(self.gamma), ctx.var(self.beta));
        ctx.graph.layer_norm(x, gamma, beta)
    }
}

/// A plain convolution with bias (no normalization, no activation).
#[derive(Clone, Copy, Debug)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
}

impl ConvParams {
    pub fn pointwise<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.add(
                &format!("{prefix}.weight"),
                he_normal(&[c_out, c_in, 1, 1], c_in, rng),
                ParamKind::Weight,
            ),
            bias: store.add(&format!("{prefix}.bias"), Tensor::zeros(&[c_out]), ParamKind::Weight),
            geom: ConvGeom::square(1, 0, 1),
        }
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.var(self.weight), ctx.var(self.bias));
        ctx.graph.conv2d(x, w, Some(b), self.geom)
    }
}

/// Shape family of a [`ConvBlock`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Square `k x k` kernel, size preserving at stride 1.
    Plain { kernel: usize, stride: usize },
    /// 3x3 kernel with dilation `rate` and padding `rate`.
    Atrous { rate: usize },
    /// Crux-shaped block: 3x3, 1x3 and 3x1 kernels summed in one sliding window.
    Asymmetric,
}

/// Convolution(s) followed by batch norm and ReLU. The convolutions carry no
/// bias of their own; the batch-norm shift is the per-channel bias.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub kind: BlockKind,
    pub kernels: Vec<(ParamId, ConvGeom)>,
    pub bn: BatchNormParams,
    pub c_in: usize,
    pub c_out: usize,
}

impl ConvBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        kind: BlockKind,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Self {
        let mut kernel = |name: &str, kh: usize, kw: usize, store: &mut ParamStore<T>| {
            store.add(
                &format!("{prefix}.{name}"),
                he_normal(&[c_out, c_in, kh, kw], c_in * kh * kw, rng),
                ParamKind::Weight,
            )
        };
        let kernels = match kind {
            BlockKind::Plain { kernel: k, stride } => {
                alloc::vec![(kernel("weight", k, k, store), ConvGeom::square(stride, k / 2, 1))]
            }
            BlockKind::Atrous { rate } => {
                alloc::vec![(kernel("weight", 3, 3, store), ConvGeom::square(1, rate, rate))]
            }
            BlockKind::Asymmetric => alloc::vec![
                (kernel("k3x3", 3, 3, store), ConvGeom::with_padding(1, (1, 1))),
                (kernel("k1x3", 1, 3, store), ConvGeom::with_padding(1, (0, 1))),
                (kernel("k3x1", 3, 1, store), ConvGeom::with_padding(1, (1, 0))),
            ],
        };
        let bn = BatchNormParams::new(store, prefix, c_out);
        Self { kind, kernels, bn, c_in, c_out }
    }

    /// For an asymmetric block, the single 3x3 kernel whose convolution
    /// equals [`pre_norm`](Self::pre_norm): the 1x3 kernel added to the middle
    /// row and the 3x1 kernel to the middle column of the square kernel.
    pub fn fused_kernel<T: Real>(&self, store: &ParamStore<T>) -> Option<Tensor<T>> {
        if self.kind != BlockKind::Asymmetric {
            return None;
        }
        let mut fused = store.get(self.kernels[0].0).clone();
        let (row, col) = (store.get(self.kernels[1].0), store.get(self.kernels[2].0));
        for oc in 0..self.c_out {
            for ic in 0..self.c_in {
                let base = (oc * self.c_in + ic) * 9;
                let k = oc * self.c_in + ic;
                for j in 0..3 {
                    fused.data_mut()[base + 3 + j] += row.data()[k * 3 + j];
                    fused.data_mut()[base + j * 3 + 1] += col.data()[k * 3 + j];
                }
            }
        }
        Some(fused)
    }

    /// Sum of the block's convolutions, before normalization.
    pub fn pre_norm<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(id, geom) in &self.kernels {
            let w = ctx.var(id);
            let y = ctx.graph.conv2d(x, w, None, geom)?;
            acc = Some(match acc {
                Some(a) => ctx.graph.add(a, y)?,
                None => y,
            });
        }
        Ok(acc.expect("at least one kernel"))
    }

    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.pre_norm(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(ctx.graph.relu(y))
    }
}
