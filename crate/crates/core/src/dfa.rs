//! Diverse feature aggregation: three parallel convolutional branches
//! (asymmetric, atrous, plain) over one backbone level, concatenated along
//! channels and reduced to the decoder width by a 1x1 block.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::graph::Var;
use crate::layers::{BlockKind, ConvBlock};
use crate::params::{Ctx, ParamStore};
use crate::real::Real;

/// One DFA branch type. The default arrangement is
/// `[Asymmetric, Atrous(2), Original]`; the uniform arrangements
/// (`3 x Original`, `3 x Atrous`, `3 x Asymmetric`) are the branch ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Asymmetric,
    Atrous(usize),
    Original,
}

impl Branch {
    fn kind(self) -> BlockKind {
        match self {
            Branch::Asymmetric => BlockKind::Asymmetric,
            Branch::Atrous(rate) => BlockKind::Atrous { rate },
            Branch::Original => BlockKind::Plain { kernel: 3, stride: 1 },
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Branch::Asymmetric => "asy",
            Branch::Atrous(_) => "atr",
            Branch::Original => "ori",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DfaConfig {
    pub branch_width: usize,
    pub branches: [Branch; 3],
    /// Width of the 1x1 reduction applied after concatenation; `None` keeps
    /// the raw `3 * branch_width` concatenation.
    pub reduce_to: Option<usize>,
}

impl Default for DfaConfig {
    fn default() -> Self {
        Self {
            branch_width: 64,
            branches: [Branch::Asymmetric, Branch::Atrous(2), Branch::Original],
            reduce_to: Some(64),
        }
    }
}

impl DfaConfig {
    pub fn uniform(branch: Branch) -> Self {
        Self { branches: [branch; 3], ..Self::default() }
    }

    pub fn concat_width(&self) -> usize {
        3 * self.branch_width
    }

    pub fn out_width(&self) -> usize {
        self.reduce_to.unwrap_or_else(|| self.concat_width())
    }
}

#[derive(Clone, Debug)]
pub struct DfaParams {
    pub level: usize,
    pub branches: Vec<ConvBlock>,
    pub reduce: Option<ConvBlock>,
}

impl DfaParams {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        level: usize,
        c_in: usize,
        config: &DfaConfig,
        rng: &mut R,
    ) -> Self {
        let mut used = Vec::new();
        let branches = config
            .branches
            .iter()
            .map(|&b| {
                // repeated branch types (ablations) get distinct names
                let n = used.iter().filter(|&&t| t == b.tag()).count();
                used.push(b.tag());
                let name = if n == 0 { format!("{prefix}.{}", b.tag()) } else { format!("{prefix}.{}{}", b.tag(), n) };
                ConvBlock::new(store, &name, b.kind(), c_in, config.branch_width, rng)
            })
            .collect();
        let reduce = config.reduce_to.map(|w| {
            ConvBlock::new(
                store,
                &format!("{prefix}.reduce"),
                BlockKind::Plain { kernel: 1, stride: 1 },
                config.concat_width(),
                w,
                rng,
            )
        });
        Self { level, branches, reduce }
    }

    /// `Concat[X_asy(F), X_atr(F), X_ori(F)]` (or whichever branches are configured).
    pub fn aggregate<T: Real>(&self, ctx: &mut Ctx<'_, T>, f_bkb: Var) -> Result<Var> {
        let outs = self.branches.iter().map(|b| b.forward(ctx, f_bkb)).collect::<Result<Vec<_>>>()?;
        ctx.graph.concat(&outs, 1)
    }

    /// Aggregation followed by the optional width reduction.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, f_bkb: Var) -> Result<Var> {
        let cat = self.aggregate(ctx, f_bkb)?;
        match &self.reduce {
            Some(r) => r.forward(ctx, cat),
            None => Ok(cat),
        }
    }
}

/// Asymmetric (crux) block: `(I * K3x3) + (I * K1x3) + (I * K3x1)`, then
/// batch norm and ReLU.
pub fn asy_conv<T: Real>(ctx: &mut Ctx<'_, T>, input: Var, block: &ConvBlock) -> Result<Var> {
    expect_kind(block, |k| matches!(k, BlockKind::Asymmetric), "asy_conv")?;
    block.forward(ctx, input)
}

/// Atrous block: 3x3 convolution with dilation and padding equal to the rate.
pub fn atr_conv<T: Real>(ctx: &mut Ctx<'_, T>, input: Var, block: &ConvBlock) -> Result<Var> {
    expect_kind(block, |k| matches!(k, BlockKind::Atrous { .. }), "atr_conv")?;
    block.forward(ctx, input)
}

fn expect_kind(block: &ConvBlock, ok: impl Fn(BlockKind) -> bool, op: &'static str) -> Result<()> {
    if ok(block.kind) {
        Ok(())
    } else {
        Err(shape_err(op, format!("block is {:?}", block.kind)))
    }
}
