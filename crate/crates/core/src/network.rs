//! The assembled network: backbone stub, DFA per level, shared ICE, PWV on
//! the three deepest levels, bottom-up fusion and five supervised heads.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dfa::{DfaConfig, DfaParams};
use crate::error::{shape_err, Error, Result};
use crate::graph::Var;
use crate::ice::{fuse_adjacent, ice_forward, resize, IceParams};
use crate::layers::{BlockKind, ConvBlock, ConvParams};
use crate::ops::ResampleMode;
use crate::params::{Ctx, Mode, ParamStore};
use crate::pwv::{bottomup_fuse, pwv_level, CapsuleConfig, PwvParams, RoutingStrategy};
use crate::real::Real;
use crate::tensor::Tensor;

/// Levels of the backbone that feed the decoder (stage 0 does not).
pub const DECODER_LEVELS: usize = 4;
/// Four side heads on the fused PWV levels plus the final product head.
pub const HEADS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct IconConfig {
    /// Channel widths of backbone stages 0..=4.
    pub backbone_widths: [usize; 5],
    pub decoder_width: usize,
    pub dfa: DfaConfig,
    /// ICE bottleneck reduction ratio.
    pub ice_ratio: usize,
    pub capsule: CapsuleConfig,
    /// Nominal input (height, width).
    pub input: (usize, usize),
    /// Loss weights of heads `[F1, F2, F3, F4, fused]`.
    pub head_weights: [f64; HEADS],
}

impl Default for IconConfig {
    fn default() -> Self {
        Self {
            backbone_widths: [16, 32, 64, 128, 256],
            decoder_width: 64,
            dfa: DfaConfig::default(),
            ice_ratio: 4,
            capsule: CapsuleConfig::default(),
            input: (64, 64),
            head_weights: [1.0; HEADS],
        }
    }
}

impl IconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.backbone_widths.contains(&0) || self.decoder_width == 0 || self.dfa.branch_width == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.dfa.reduce_to == Some(0) {
            return Err(Error::Config("DFA reduction width must be positive".into()));
        }
        if self.ice_ratio == 0 {
            return Err(Error::Config("ICE ratio must be positive".into()));
        }
        let c = &self.capsule;
        if c.pose.0 == 0 || c.pose.1 == 0 || c.lower_types == 0 || c.higher_types == 0 || c.iterations == 0 {
            return Err(Error::Config("capsule pose, type counts and iterations must be positive".into()));
        }
        if c.grid == Some(0) {
            return Err(Error::Config("capsule grid must be positive".into()));
        }
        if c.routing != RoutingStrategy::Em {
            return Err(Error::Config(format!("routing strategy {:?} is not implemented; use Em", c.routing)));
        }
        check_resolution(self.input)
    }

    /// Capsule grid for an input of the given (height, width).
    pub fn grid_for(&self, input: (usize, usize)) -> (usize, usize) {
        (self.capsule.grid_for(input.0), self.capsule.grid_for(input.1))
    }
}

pub fn check_resolution(hw: (usize, usize)) -> Result<()> {
    if hw.0 == 0 || hw.1 == 0 || hw.0 % 32 != 0 || hw.1 % 32 != 0 {
        return Err(Error::Config(format!("input {}x{} is not a positive multiple of 32", hw.0, hw.1)));
    }
    Ok(())
}

/// Random-initialised five-stage strided CNN. Stage 0 is a single stride-2
/// 3x3 block; stages 1..=4 are a stride-2 3x3 block followed by a stride-1
/// one, giving strides 4, 8, 16, 32.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub stages: Vec<Vec<ConvBlock>>,
}

impl Backbone {
    pub fn new<T: Real, R: rand::Rng + ?Sized>(store: &mut ParamStore<T>, widths: &[usize; 5], rng: &mut R) -> Self {
        let mut stages = Vec::new();
        let mut c_in = 3;
        for (s, &w) in widths.iter().enumerate() {
            let mut blocks = Vec::new();
            blocks.push(ConvBlock::new(
                store,
                &format!("backbone.s{s}.down"),
                BlockKind::Plain { kernel: 3, stride: 2 },
                c_in,
                w,
                rng,
            ));
            if s > 0 {
                blocks.push(ConvBlock::new(
                    store,
                    &format!("backbone.s{s}.conv"),
                    BlockKind::Plain { kernel: 3, stride: 1 },
                    w,
                    w,
                    rng,
                ));
            }
            stages.push(blocks);
            c_in = w;
        }
        Self { stages }
    }

    /// Returns the stage 1..=4 features.
    pub fn forward<T: Real>(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<Vec<Var>> {
        let s = ctx.graph.shape(image).to_vec();
        if s.len() != 4 || s[1] != 3 {
            return Err(shape_err("backbone", format!("expected [B,3,H,W], got {:?}", s)));
        }
        check_resolution((s[2], s[3]))?;
        let mut x = image;
        let mut feats = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            for b in stage {
                x = b.forward(ctx, x)?;
            }
            if i > 0 {
                feats.push(x);
            }
        }
        Ok(feats)
    }
}

/// Logit maps at input resolution, `[B,1,H,W]` each.
#[derive(Clone, Copy, Debug)]
pub struct PredictionSet {
    /// Heads on the fused PWV levels 1..=4.
    pub side: [Var; DECODER_LEVELS],
    /// Head on `F1_pwv * F1_ice`; its sigmoid is the saliency map.
    pub fused: Var,
}

impl PredictionSet {
    /// All supervised heads in loss-weight order `[F1, F2, F3, F4, fused]`.
    pub fn heads(&self) -> [Var; HEADS] {
        [self.side[0], self.side[1], self.side[2], self.side[3], self.fused]
    }
}

/// Intermediate maps of one forward pass, shallow level first.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub backbone: Vec<Var>,
    pub dfa: Vec<Var>,
    /// Concatenated adjacent-level maps entering ICE (pre-enhancement).
    pub ice_in: Vec<Var>,
    pub ice: Vec<Var>,
    /// PWV outputs of levels 2..=4 on the capsule grid.
    pub capsule: Vec<Var>,
    /// Bottom-up fused maps `F1_pwv..F4_pwv`.
    pub pwv: Vec<Var>,
    pub final_map: Var,
    pub predictions: PredictionSet,
}

#[derive(Clone, Debug)]
pub struct IconNet<T> {
    pub config: IconConfig,
    pub store: ParamStore<T>,
    pub backbone: Backbone,
    pub dfa: Vec<DfaParams>,
    /// One record shared by every ICE call site.
    pub ice: IceParams,
    /// PWV parameters of levels 2, 3, 4.
    pub pwv: Vec<PwvParams>,
    pub heads: Vec<ConvParams>,
}

impl<T: Real> IconNet<T> {
    pub fn new(config: IconConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = Backbone::new(&mut store, &config.backbone_widths, &mut rng);
        let dfa = (1..=DECODER_LEVELS)
            .map(|l| {
                DfaParams::new(&mut store, &format!("dfa{l}"), l, config.backbone_widths[l], &config.dfa, &mut rng)
            })
            .collect();
        let width = config.decoder_width;
        let ice = IceParams::new(&mut store, "ice", 3 * config.dfa.out_width(), config.ice_ratio, width, &mut rng);
        let pwv = (2..=DECODER_LEVELS)
            .map(|l| PwvParams::new(&mut store, &format!("pwv{l}"), width, &config.capsule, &mut rng))
            .collect();
        let names = ["head1", "head2", "head3", "head4", "head_fused"];
        let heads = names.iter().map(|n| ConvParams::pointwise(&mut store, n, width, 1, &mut rng)).collect();
        Ok(Self { config, store, backbone, dfa, ice, pwv, heads })
    }

    /// Overwrites the named tensor, keeping its shape.
    pub fn assign(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self.store.find(name).ok_or_else(|| Error::Validation(format!("unknown parameter {name}")))?;
        let cur = self.store.get_mut(id);
        if cur.shape() != value.shape() {
            return Err(Error::Validation(format!(
                "parameter {name}: shape {:?} does not match {:?}",
                value.shape(),
                cur.shape()
            )));
        }
        *cur = value;
        Ok(())
    }

    pub fn forward(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<PredictionSet> {
        Ok(self.forward_trace(ctx, image)?.predictions)
    }

    pub fn forward_trace(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<ForwardTrace> {
        let s = ctx.graph.shape(image).to_vec();
        let backbone = self.backbone.forward(ctx, image)?;
        let input = (s[2], s[3]);
        let dfa = backbone.iter().zip(&self.dfa).map(|(&f, p)| p.forward(ctx, f)).collect::<Result<Vec<_>>>()?;
        let mut ice_in = Vec::new();
        let mut ice = Vec::new();
        for i in 0..DECODER_LEVELS {
            let prev = if i > 0 { Some(dfa[i - 1]) } else { None };
            let next = dfa.get(i + 1).copied();
            let fused = fuse_adjacent(ctx, prev, dfa[i], next)?;
            ice_in.push(fused);
            ice.push(ice_forward(ctx, fused, &self.ice)?);
        }
        let grid = self.config.grid_for(input);
        let mut capsule = Vec::new();
        let mut deep_first = Vec::new();
        for (k, p) in self.pwv.iter().enumerate().rev() {
            let level = ice[k + 1];
            let c = pwv_level(ctx, level, p, &self.config.capsule, grid)?;
            capsule.push(c);
            let ls = ctx.graph.shape(level).to_vec();
            deep_first.push(resize(ctx, c, (ls[2], ls[3]))?);
        }
        capsule.reverse();
        deep_first.push(ice[0]);
        let mut pwv = bottomup_fuse(ctx, &deep_first)?;
        pwv.reverse();
        let final_map = ctx.graph.mul(pwv[0], ice[0])?;
        let mut logits = Vec::new();
        for (h, &m) in self.heads.iter().zip(pwv.iter().chain(core::iter::once(&final_map))) {
            let y = h.forward(ctx, m)?;
            logits.push(ctx.graph.resample(y, input, ResampleMode::Bilinear)?);
        }
        let predictions = PredictionSet { side: [logits[0], logits[1], logits[2], logits[3]], fused: logits[4] };
        Ok(ForwardTrace { backbone, dfa, ice_in, ice, capsule, pwv, final_map, predictions })
    }

    /// Saliency map `sigmoid(fused head)` in eval mode, `[B,1,H,W]`,
    /// optionally binarized (`1` where the map exceeds the threshold).
    pub fn infer(&self, image: &Tensor<T>, threshold: Option<T>) -> Result<Tensor<T>> {
        let mut ctx = Ctx::new(&self.store, Mode::Eval);
        let x = ctx.input(image.clone());
        let p = self.forward(&mut ctx, x)?;
        let prob = ctx.graph.sigmoid(p.fused);
        let out = ctx.graph.value(prob).clone();
        Ok(match threshold {
            Some(t) => out.map(|v| if v > t { T::one() } else { T::zero() }),
            None => out,
        })
    }

    /// Parameter names and shapes, in store order.
    pub fn describe(&self) -> Vec<(String, Vec<usize>)> {
        self.store.entries().iter().map(|e| (e.name.clone(), e.tensor.shape().to_vec())).collect()
    }
}
