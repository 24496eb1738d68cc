//! Integrity channel enhancement.
//!
//! Three adjacent DFA levels are brought to the current level's resolution
//! and concatenated. The spatial L2 norm of every channel gives a channel
//! descriptor (the integrity embedding), which a 1x1 bottleneck with layer
//! norm turns into a per-channel weight that rescales the fused map:
//!
//! `F_ice = F_fuse * X(ReLU(LN(X(I_emb))))`, with `X` a 1x1 convolution.
//!
//! A single [`IceParams`] record serves every call site.

use alloc::format;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::graph::Var;
use crate::layers::{BlockKind, ConvBlock, ConvParams, LayerNormParams};
use crate::ops::ResampleMode;
use crate::params::{Ctx, ParamStore};
use crate::real::Real;

#[derive(Clone, Debug)]
pub struct IceParams {
    pub bottleneck_in: ConvParams,
    pub ln: LayerNormParams,
    pub bottleneck_out: ConvParams,
    /// 1x1 block from the fused width down to the decoder width.
    pub reduce: ConvBlock,
    pub c_fuse: usize,
}

impl IceParams {
    /// `c_fuse` is the fused channel count (three times the DFA width),
    /// `ratio` the bottleneck reduction.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        c_fuse: usize,
        ratio: usize,
        out_width: usize,
        rng: &mut R,
    ) -> Self {
        let hidden = (c_fuse / ratio).max(1);
        Self {
            bottleneck_in: ConvParams::pointwise(store, &format!("{prefix}.bottleneck_in"), c_fuse, hidden, rng),
            ln: LayerNormParams::new(store, &format!("{prefix}.bottleneck"), hidden),
            bottleneck_out: ConvParams::pointwise(store, &format!("{prefix}.bottleneck_out"), hidden, c_fuse, rng),
            reduce: ConvBlock::new(
                store,
                &format!("{prefix}.reduce"),
                BlockKind::Plain { kernel: 1, stride: 1 },
                c_fuse,
                out_width,
                rng,
            ),
            c_fuse,
        }
    }
}

/// Resizes a [B,C,H,W] map: adaptive average pooling when shrinking on both
/// axes, bilinear interpolation otherwise.
pub fn resize<T: Real>(ctx: &mut Ctx<'_, T>, x: Var, hw: (usize, usize)) -> Result<Var> {
    let s = ctx.graph.shape(x);
    let (h, w) = (s[2], s[3]);
    if (h, w) == hw {
        return Ok(x);
    }
    let mode = if hw.0 <= h && hw.1 <= w { ResampleMode::AdaptiveAvg } else { ResampleMode::Bilinear };
    ctx.graph.resample(x, hw, mode)
}

/// `Concat[F(i-1), F(i), F(i+1)]` at the resolution of `cur`. A missing
/// neighbour (first or last level) is replaced by `cur` itself.
pub fn fuse_adjacent<T: Real>(ctx: &mut Ctx<'_, T>, prev: Option<Var>, cur: Var, next: Option<Var>) -> Result<Var> {
    let s = ctx.graph.shape(cur);
    if s.len() != 4 {
        return Err(shape_err("fuse_adjacent", format!("expected a 4-D map, got {:?}", s)));
    }
    let hw = (s[2], s[3]);
    let prev = match prev {
        Some(p) => resize(ctx, p, hw)?,
        None => cur,
    };
    let next = match next {
        Some(n) => resize(ctx, n, hw)?,
        None => cur,
    };
    ctx.graph.concat(&[prev, cur, next], 1)
}

/// Per-channel L2 norm over spatial positions: [B,C,H,W] -> [B,C,1,1].
pub fn integrity_embedding<T: Real>(ctx: &mut Ctx<'_, T>, f_fuse: Var) -> Result<Var> {
    ctx.graph.spatial_l2_norm(f_fuse)
}

/// The channel weights `X(ReLU(LN(X(I_emb))))`, shape [B,C,1,1].
pub fn channel_attention<T: Real>(ctx: &mut Ctx<'_, T>, emb: Var, params: &IceParams) -> Result<Var> {
    let h = params.bottleneck_in.forward(ctx, emb)?;
    let h = params.ln.forward(ctx, h)?;
    let h = ctx.graph.relu(h);
    params.bottleneck_out.forward(ctx, h)
}

/// Multiplies every spatial site of channel `c` by `weights[c]`.
pub fn scale_channels<T: Real>(ctx: &mut Ctx<'_, T>, x: Var, weights: Var) -> Result<Var> {
    let s = ctx.graph.shape(x).to_vec();
    let ws = ctx.graph.shape(weights);
    if ws.len() != 4 || ws[0] != s[0] || ws[1] != s[1] || ws[2] != 1 || ws[3] != 1 {
        return Err(shape_err("scale_channels", format!("weights {:?} do not match map {:?} as [B,C,1,1]", ws, s)));
    }
    let wide = ctx.graph.expand(weights, 2, s[2])?;
    let wide = ctx.graph.expand(wide, 3, s[3])?;
    ctx.graph.mul(x, wide)
}

/// Channel reweighting of the fused map, before width reduction.
pub fn reweight<T: Real>(ctx: &mut Ctx<'_, T>, f_fuse: Var, params: &IceParams) -> Result<Var> {
    let c = ctx.graph.shape(f_fuse).get(1).copied().unwrap_or(0);
    if c != params.c_fuse {
        return Err(shape_err(
            "ice_forward",
            format!("fused map has {} channels, module expects {}", c, params.c_fuse),
        ));
    }
    let emb = integrity_embedding(ctx, f_fuse)?;
    let att = channel_attention(ctx, emb, params)?;
    scale_channels(ctx, f_fuse, att)
}

/// Full ICE step: reweighting followed by the 1x1 reduction to decoder width.
pub fn ice_forward<T: Real>(ctx: &mut Ctx<'_, T>, f_fuse: Var, params: &IceParams) -> Result<Var> {
    let enhanced = reweight(ctx, f_fuse, params)?;
    params.reduce.forward(ctx, enhanced)
}
