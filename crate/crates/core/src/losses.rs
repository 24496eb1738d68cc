//! Cooperative loss `L_CPR = L_BCE + L_IoU`, summed over supervised heads.
//!
//! The plain functions work on [`SaliencyPair`]s of probabilities; the graph
//! version applies the same definitions to head logits through a sigmoid.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::network::PredictionSet;
use crate::params::Ctx;
use crate::real::math;
use crate::real::Real;
use crate::tensor::Tensor;

/// Probability clamp applied before logarithms.
pub const LOSS_EPS: f64 = 1e-7;

/// A prediction map in `[0,1]` and a binary mask of the same extent.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyPair<'a> {
    pub p: &'a [f64],
    pub g: &'a [f64],
    pub width: usize,
    pub height: usize,
}

impl<'a> SaliencyPair<'a> {
    pub fn new(p: &'a [f64], g: &'a [f64], width: usize, height: usize) -> Result<Self> {
        let n = width * height;
        if n == 0 || p.len() != n || g.len() != n {
            return Err(Error::Validation(format!(
                "pair sizes: prediction {} and mask {} values for a {}x{} map",
                p.len(),
                g.len(),
                width,
                height
            )));
        }
        if let Some(v) = g.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Validation(format!("mask value {v} is not binary")));
        }
        if let Some(v) = p.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Validation(format!("prediction value {v} outside [0,1]")));
        }
        Ok(Self { p, g, width, height })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Mean binary cross-entropy.
pub fn bce_loss(pair: &SaliencyPair<'_>) -> f64 {
    let total: f64 = pair
        .p
        .iter()
        .zip(pair.g)
        .map(|(&p, &g)| {
            let p = p.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
            -(g * math::ln(p) + (1.0 - g) * math::ln(1.0 - p))
        })
        .sum();
    total / pair.len() as f64
}

/// `1 - sum(PG) / sum(P + G - PG)`, union floored at the clamp epsilon.
pub fn iou_loss(pair: &SaliencyPair<'_>) -> f64 {
    let (mut inter, mut union) = (0.0, 0.0);
    for (&p, &g) in pair.p.iter().zip(pair.g) {
        inter += p * g;
        union += p + g - p * g;
    }
    1.0 - inter / if union.is_nan() { union } else { union.max(LOSS_EPS) }
}

pub fn cpr_pair(pair: &SaliencyPair<'_>) -> f64 {
    bce_loss(pair) + iou_loss(pair)
}

/// Weighted sum of `bce + iou` over several head maps against one mask.
pub fn cpr_loss(heads: &[&[f64]], weights: &[f64], g: &[f64], width: usize, height: usize) -> Result<f64> {
    if heads.len() != weights.len() {
        return Err(Error::Validation(format!("{} heads but {} weights", heads.len(), weights.len())));
    }
    let mut total = 0.0;
    for (&p, &w) in heads.iter().zip(weights) {
        total += w * cpr_pair(&SaliencyPair::new(p, g, width, height)?);
    }
    Ok(total)
}

/// Checks that a target tensor holds only 0 and 1.
pub fn validate_mask<T: Real>(g: &Tensor<T>) -> Result<()> {
    match g.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        Some(v) => Err(Error::Validation(format!("mask value {v} is not binary"))),
        None => Ok(()),
    }
}

/// Per-head loss nodes `bce + iou` on `sigmoid(logit)`.
pub fn head_losses<T: Real>(ctx: &mut Ctx<'_, T>, logits: &[Var], target: &Tensor<T>) -> Result<Vec<Var>> {
    validate_mask(target)?;
    let eps = T::cst(LOSS_EPS);
    logits
        .iter()
        .map(|&l| {
            let p = ctx.graph.sigmoid(l);
            let b = ctx.graph.bce_loss(p, target, eps)?;
            let i = ctx.graph.iou_loss(p, target, eps)?;
            ctx.graph.add(b, i)
        })
        .collect()
}

/// Weighted cooperative loss over every head of a prediction set.
pub fn cpr_graph<T: Real>(
    ctx: &mut Ctx<'_, T>,
    pred: &PredictionSet,
    target: &Tensor<T>,
    weights: &[f64],
) -> Result<Var> {
    let heads = pred.heads();
    if weights.len() != heads.len() {
        return Err(Error::Config(format!("{} head weights for {} heads", weights.len(), heads.len())));
    }
    let per = head_losses(ctx, &heads, target)?;
    let scaled: Vec<Var> = per.iter().zip(weights).map(|(&l, &w)| ctx.graph.mul_scalar(l, T::cst(w))).collect();
    ctx.graph.add_n(&scaled)
}
