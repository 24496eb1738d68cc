//! Part-whole verification: a capsule layer with EM routing over
//! grid-reduced ICE features, followed by bottom-up fusion across levels.
//!
//! Capsule tensors are laid out with all routing instances flattened into a
//! leading axis `S = batch * grid_h * grid_w`; routing runs over capsule
//! types within a 1x1 spatial window, so every site is independent.
//!
//! Routing follows the matrix-capsule EM procedure. With responsibilities
//! `R[i][j]` (initially uniform) and lower activations `a[i]`, each
//! iteration runs
//!
//! * M-step: `w = R * a`, `mu[j] = sum_i w V[i][j] / sum_i w`,
//!   `var[j] = max(sum_i w (V - mu)^2 / sum_i w, 1e-6)`,
//!   `cost[j] = sum_h (beta_u + ln sqrt(var[j][h])) * sum_i w`,
//!   `a'[j] = sigmoid(lambda * (beta_a - cost[j]))`;
//! * E-step (all but the last iteration):
//!   `R[i][j] = softmax_j(ln a'[j] + ln N(V[i][j]; mu[j], var[j]))`.
//!
//! The inverse temperature `lambda` rises linearly from 1 to 3 across
//! iterations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};
use crate::graph::Var;
use crate::ice::resize;
use crate::layers::{BlockKind, ConvBlock, ConvParams};
use crate::ops::ResampleMode;
use crate::params::{Ctx, ParamId, ParamKind, ParamStore};
use crate::real::{math, Real};
use crate::tensor::Tensor;

pub const VARIANCE_FLOOR: f64 = 1e-6;
/// Total assignment mass below which a higher capsule falls back to
/// uniform weights over the lower capsules.
pub const MASS_EPS: f64 = 1e-12;
const LOG_FLOOR: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoutingStrategy {
    Em,
    /// Routing-by-agreement with dot-product logits. Not implemented.
    Dynamic,
    /// Self-routing with per-capsule gating. Not implemented.
    SelfRouting,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CapsuleConfig {
    /// Pose matrix rows x columns. Votes left-multiply poses by a
    /// `rows x rows` transformation matrix.
    pub pose: (usize, usize),
    pub lower_types: usize,
    pub higher_types: usize,
    /// Capsule grid side; `None` derives it as input side / 16.
    pub grid: Option<usize>,
    pub iterations: usize,
    pub routing: RoutingStrategy,
}

impl Default for CapsuleConfig {
    fn default() -> Self {
        Self { pose: (4, 4), lower_types: 8, higher_types: 8, grid: None, iterations: 3, routing: RoutingStrategy::Em }
    }
}

impl CapsuleConfig {
    pub fn pose_len(&self) -> usize {
        self.pose.0 * self.pose.1
    }

    /// Channels of a capsule map holding `types` capsules per site.
    pub fn map_channels(&self, types: usize) -> usize {
        types * (self.pose_len() + 1)
    }

    pub fn grid_for(&self, input_side: usize) -> usize {
        self.grid.unwrap_or((input_side / 16).max(1))
    }
}

/// Poses `[S, n, pose_len]` and activations `[S, n, 1]` of a capsule field
/// over `batch x grid.0 x grid.1` sites.
#[derive(Clone, Copy, Debug)]
pub struct CapsuleState {
    pub poses: Var,
    pub activations: Var,
    pub batch: usize,
    pub grid: (usize, usize),
    pub types: usize,
}

impl CapsuleState {
    pub fn sites(&self) -> usize {
        self.batch * self.grid.0 * self.grid.1
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TransformParams {
    /// `[lower, higher, rows, rows]`, shared across sites.
    pub t: ParamId,
    pub beta_a: ParamId,
    pub beta_u: ParamId,
}

impl TransformParams {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: &CapsuleConfig,
        rng: &mut R,
    ) -> Self {
        let (nl, nh, p) = (config.lower_types, config.higher_types, config.pose.0);
        let noise = Normal::new(0.0, 0.1).expect("finite");
        let t = Tensor::from_fn(&[nl, nh, p, p], |i| {
            let (r, c) = ((i / p) % p, i % p);
            T::cst(if r == c { 1.0 } else { 0.0 } + noise.sample(rng))
        });
        Self {
            t: store.add(&format!("{prefix}.transform"), t, ParamKind::Weight),
            beta_a: store.add(&format!("{prefix}.beta_a"), Tensor::zeros(&[nh]), ParamKind::Weight),
            beta_u: store.add(&format!("{prefix}.beta_u"), Tensor::zeros(&[nh]), ParamKind::Weight),
        }
    }
}

/// Adaptive average pooling to a `grid x grid` field.
pub fn reduce_to_grid<T: Real>(ctx: &mut Ctx<'_, T>, x: Var, grid: (usize, usize)) -> Result<Var> {
    let s = ctx.graph.shape(x).to_vec();
    if s.len() != 4 {
        return Err(shape_err("reduce_to_grid", format!("expected [B,C,H,W], got {:?}", s)));
    }
    if grid.0 > s[2] || grid.1 > s[3] {
        return Err(shape_err(
            "reduce_to_grid",
            format!("grid {}x{} exceeds input height/width {}x{}", grid.0, grid.1, s[2], s[3]),
        ));
    }
    if (s[2], s[3]) == grid {
        return Ok(x);
    }
    ctx.graph.resample(x, grid, ResampleMode::AdaptiveAvg)
}

/// Brings a level to the capsule grid: pooling when the level is at least
/// as large as the grid, bilinear upsampling when it is smaller.
pub fn adjust_to_grid<T: Real>(ctx: &mut Ctx<'_, T>, x: Var, grid: (usize, usize)) -> Result<Var> {
    let s = ctx.graph.shape(x);
    if s.len() == 4 && s[2] >= grid.0 && s[3] >= grid.1 {
        reduce_to_grid(ctx, x, grid)
    } else {
        resize(ctx, x, grid)
    }
}

/// Splits every site's channels into `types` groups of `pose_len + 1`
/// values: the first `pose_len` form the pose, the sigmoid of the last the
/// activation.
pub fn make_primary_capsules<T: Real>(
    ctx: &mut Ctx<'_, T>,
    f: Var,
    types: usize,
    pose_len: usize,
) -> Result<CapsuleState> {
    let s = ctx.graph.shape(f).to_vec();
    if s.len() != 4 {
        return Err(shape_err("make_primary_capsules", format!("expected [B,C,H,W], got {:?}", s)));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let group = pose_len + 1;
    if types == 0 || c != types * group {
        return Err(Error::Config(format!(
            "{} channels cannot be split into {} capsule types of {} values (pose {} + activation)",
            c, types, group, pose_len
        )));
    }
    let g = &mut ctx.graph;
    let x = g.reshape(f, &[b, types, group, h, w])?;
    let x = g.permute(x, &[0, 3, 4, 1, 2])?;
    let x = g.reshape(x, &[b * h * w, types, group])?;
    let poses = g.slice(x, 2, 0, pose_len)?;
    let logits = g.slice(x, 2, pose_len, 1)?;
    let activations = g.sigmoid(logits);
    Ok(CapsuleState { poses, activations, batch: b, grid: (h, w), types })
}

/// Inverse of [`make_primary_capsules`] without the sigmoid: re-densifies a
/// capsule field into `[B, types * (pose_len + 1), H, W]`, poses first.
pub fn capsules_to_map<T: Real>(ctx: &mut Ctx<'_, T>, state: &CapsuleState) -> Result<Var> {
    let g = &mut ctx.graph;
    let pose_len = g.shape(state.poses)[2];
    let group = pose_len + 1;
    let (b, (h, w), n) = (state.batch, state.grid, state.types);
    let x = g.concat(&[state.poses, state.activations], 2)?;
    let x = g.reshape(x, &[b, h, w, n, group])?;
    let x = g.permute(x, &[0, 3, 4, 1, 2])?;
    g.reshape(x, &[b, n * group, h, w])
}

/// Votes `V[s][i][j] = T[i][j] * M[s][i]`, shape `[S, lower, higher, pose_len]`.
pub fn compute_votes<T: Real>(
    ctx: &mut Ctx<'_, T>,
    state: &CapsuleState,
    transform: &TransformParams,
    pose: (usize, usize),
) -> Result<Var> {
    let t = ctx.var(transform.t);
    let ts = ctx.graph.shape(t).to_vec();
    let (pr, pc) = pose;
    let ps = ctx.graph.shape(state.poses).to_vec();
    if ts.len() != 4 || ts[0] != state.types || ts[2] != pr || ts[3] != pr || ps[2] != pr * pc {
        return Err(shape_err(
            "compute_votes",
            format!(
                "transform {:?} incompatible with {} lower capsules of pose {}x{} (pose tensor {:?})",
                ts, state.types, pr, pc, ps
            ),
        ));
    }
    let (sites, nl, nh) = (ps[0], state.types, ts[1]);
    let g = &mut ctx.graph;
    let m = g.reshape(state.poses, &[sites, nl, 1, pr, pc])?;
    let m = g.expand(m, 2, nh)?;
    let tt = g.reshape(t, &[1, nl, nh, pr, pr])?;
    let tt = g.expand(tt, 0, sites)?;
    let v = g.matmul(tt, m)?;
    g.reshape(v, &[sites, nl, nh, pr * pc])
}

/// Responsibilities after each E-step, for inspection.
#[derive(Clone, Debug, Default)]
pub struct RoutingTrace<T> {
    pub responsibilities: Vec<Tensor<T>>,
    pub means_per_iteration: Vec<Tensor<T>>,
}

pub fn inverse_temperature(iteration: usize, iterations: usize) -> f64 {
    if iterations <= 1 {
        1.0
    } else {
        1.0 + 2.0 * iteration as f64 / (iterations - 1) as f64
    }
}

/// Reshapes a per-higher-type parameter `[nh]` to `[S, 1, nh, width]`.
fn per_higher<T: Real>(ctx: &mut Ctx<'_, T>, id: ParamId, sites: usize, nh: usize, width: usize) -> Result<Var> {
    let v = ctx.var(id);
    let g = &mut ctx.graph;
    let v = g.reshape(v, &[1, 1, nh, 1])?;
    let v = g.expand(v, 0, sites)?;
    if width == 1 {
        Ok(v)
    } else {
        g.expand(v, 3, width)
    }
}

/// EM routing of `votes` `[S, lower, higher, D]` weighted by the lower
/// activations `[S, lower, 1]`. Returns the higher capsules (pose = final
/// Gaussian means, activation = final logistic activation).
pub fn em_routing<T: Real>(
    ctx: &mut Ctx<'_, T>,
    votes: Var,
    lower_activations: Var,
    transform: &TransformParams,
    iterations: usize,
    mut trace: Option<&mut RoutingTrace<T>>,
) -> Result<(Var, Var)> {
    if iterations == 0 {
        return Err(Error::Config("routing needs at least one iteration".into()));
    }
    let vs = ctx.graph.shape(votes).to_vec();
    if vs.len() != 4 {
        return Err(shape_err("em_routing", format!("votes must be [S, lower, higher, D], got {:?}", vs)));
    }
    let (sites, nl, nh, d) = (vs[0], vs[1], vs[2], vs[3]);
    if ctx.graph.shape(lower_activations) != [sites, nl, 1] {
        return Err(shape_err(
            "em_routing",
            format!("activations {:?} do not match votes {:?}", ctx.graph.shape(lower_activations), vs),
        ));
    }
    let beta_a = per_higher(ctx, transform.beta_a, sites, nh, 1)?;
    let beta_u = per_higher(ctx, transform.beta_u, sites, nh, d)?;
    let g = &mut ctx.graph;
    let a_in = g.reshape(lower_activations, &[sites, nl, 1, 1])?;
    let a_in = g.expand(a_in, 2, nh)?;
    let mut r = g.constant(Tensor::full(&[sites, nl, nh, 1], T::cst(1.0 / nh as f64)));
    let mut out = None;
    for it in 0..iterations {
        let lambda = T::cst(inverse_temperature(it, iterations));
        // M-step
        let mut w = g.mul(r, a_in)?;
        let mut mass = g.sum_axis(w, 1)?;
        let starving: Vec<usize> =
            g.value(mass).data().iter().enumerate().filter(|(_, &m)| m < T::cst(MASS_EPS)).map(|(k, _)| k).collect();
        if !starving.is_empty() {
            let mut keep = vec![T::one(); sites * nl * nh];
            let mut fill = vec![T::zero(); sites * nl * nh];
            for &k in &starving {
                let (s, j) = (k / nh, k % nh);
                for i in 0..nl {
                    keep[(s * nl + i) * nh + j] = T::zero();
                    fill[(s * nl + i) * nh + j] = T::cst(1.0 / nl as f64);
                }
            }
            let keep = g.constant(Tensor::new(&[sites, nl, nh, 1], keep)?);
            let fill = g.constant(Tensor::new(&[sites, nl, nh, 1], fill)?);
            let kept = g.mul(w, keep)?;
            w = g.add(kept, fill)?;
            mass = g.sum_axis(w, 1)?;
        }
        let wd = g.expand(w, 3, d)?;
        let mass_d = g.expand(mass, 3, d)?;
        let weighted = g.mul(wd, votes)?;
        let num = g.sum_axis(weighted, 1)?;
        let mu = g.div(num, mass_d)?;
        let mu_e = g.expand(mu, 1, nl)?;
        let diff = g.sub(votes, mu_e)?;
        let sq = g.square(diff);
        let wsq = g.mul(wd, sq)?;
        let var_num = g.sum_axis(wsq, 1)?;
        let var = g.div(var_num, mass_d)?;
        let var = g.clamp_min(var, T::cst(VARIANCE_FLOOR));
        let ln_var = g.ln(var);
        let ln_sigma = g.mul_scalar(ln_var, T::cst(0.5));
        let unit = g.add(ln_sigma, beta_u)?;
        let cost = g.mul(unit, mass_d)?;
        let cost = g.sum_axis(cost, 3)?;
        let logit = g.sub(beta_a, cost)?;
        let logit = g.mul_scalar(logit, lambda);
        let a_out = g.sigmoid(logit);
        if let Some(tr) = trace.as_deref_mut() {
            tr.means_per_iteration.push(g.value(mu).clone());
        }
        if it + 1 < iterations {
            // E-step
            let var_e = g.expand(var, 1, nl)?;
            let ln_var_e = g.ln(var_e);
            let maha = g.div(sq, var_e)?;
            let s = g.add(ln_var_e, maha)?;
            let s = g.mul_scalar(s, T::cst(-0.5));
            let s = g.add_scalar(s, T::cst(-0.5 * math::ln(2.0 * core::f64::consts::PI)));
            let ln_p = g.sum_axis(s, 3)?;
            let a_safe = g.clamp_min(a_out, T::cst(LOG_FLOOR));
            let ln_a = g.ln(a_safe);
            let ln_a = g.expand(ln_a, 1, nl)?;
            let logits = g.add(ln_p, ln_a)?;
            r = g.softmax(logits, 2)?;
            if let Some(tr) = trace.as_deref_mut() {
                tr.responsibilities.push(g.value(r).clone());
            }
        }
        out = Some((mu, a_out));
    }
    let (mu, a_out) = out.expect("iterations >= 1");
    let poses = g.reshape(mu, &[sites, nh, d])?;
    let acts = g.reshape(a_out, &[sites, nh, 1])?;
    Ok((poses, acts))
}

/// Parameters of one PWV level: the primary-capsule projection, the routing
/// transforms and the 1x1 block back to decoder width.
#[derive(Clone, Debug)]
pub struct PwvParams {
    pub primary: ConvParams,
    pub transform: TransformParams,
    pub out: ConvBlock,
}

impl PwvParams {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        width: usize,
        config: &CapsuleConfig,
        rng: &mut R,
    ) -> Self {
        let primary = ConvParams::pointwise(
            store,
            &format!("{prefix}.primary"),
            width,
            config.map_channels(config.lower_types),
            rng,
        );
        let transform = TransformParams::new(store, prefix, config, rng);
        let out = ConvBlock::new(
            store,
            &format!("{prefix}.out"),
            BlockKind::Plain { kernel: 1, stride: 1 },
            config.map_channels(config.higher_types),
            width,
            rng,
        );
        Self { primary, transform, out }
    }
}

/// Primary capsules from `f` -> one EM-routed capsule layer -> dense map of
/// `higher_types * (pose_len + 1)` channels on the same grid.
pub fn pwv_layer<T: Real>(
    ctx: &mut Ctx<'_, T>,
    f: Var,
    transform: &TransformParams,
    config: &CapsuleConfig,
    trace: Option<&mut RoutingTrace<T>>,
) -> Result<Var> {
    if config.routing != RoutingStrategy::Em {
        return Err(Error::Config(format!("routing strategy {:?} is not implemented; use Em", config.routing)));
    }
    let lower = make_primary_capsules(ctx, f, config.lower_types, config.pose_len())?;
    let votes = compute_votes(ctx, &lower, transform, config.pose)?;
    let (poses, activations) = em_routing(ctx, votes, lower.activations, transform, config.iterations, trace)?;
    let higher = CapsuleState { poses, activations, types: config.higher_types, ..lower };
    capsules_to_map(ctx, &higher)
}

/// One level of PWV: grid adjustment, primary projection, routing and the
/// width block. The result stays on the capsule grid.
pub fn pwv_level<T: Real>(
    ctx: &mut Ctx<'_, T>,
    f_ice: Var,
    params: &PwvParams,
    config: &CapsuleConfig,
    grid: (usize, usize),
) -> Result<Var> {
    let x = adjust_to_grid(ctx, f_ice, grid)?;
    let x = params.primary.forward(ctx, x)?;
    let caps = pwv_layer(ctx, x, &params.transform, config, None)?;
    params.out.forward(ctx, caps)
}

/// Bottom-up fusion. `feats` are ordered deep -> shallow; the deepest passes
/// through and each shallower level adds the (resized) fused level below it.
/// Returns the fused maps in the same order.
pub fn bottomup_fuse<T: Real>(ctx: &mut Ctx<'_, T>, feats: &[Var]) -> Result<Vec<Var>> {
    let mut out: Vec<Var> = Vec::with_capacity(feats.len());
    for &f in feats {
        let fused = match out.last() {
            None => f,
            Some(&deeper) => {
                let s = ctx.graph.shape(f).to_vec();
                let up = resize(ctx, deeper, (s[2], s[3]))?;
                ctx.graph.add(f, up)?
            }
        };
        out.push(fused);
    }
    Ok(out)
}

/// Number of votes a site produces: `lower * higher`.
pub fn vote_count(config: &CapsuleConfig) -> usize {
    config.lower_types * config.higher_types
}
