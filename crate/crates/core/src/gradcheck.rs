//! Central finite-difference checks of analytic gradients, in `f64`.
//!
//! The relative error of one element is
//! `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Ctx, Mode, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradOptions {
    /// Central-difference step.
    pub h: f64,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
    /// Check at most this many elements per input (chosen at random), or
    /// every element when `None`.
    pub samples: Option<usize>,
    pub seed: u64,
}

impl Default for GradOptions {
    fn default() -> Self {
        Self { h: 1e-5, floor: 1e-6, samples: None, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradSample {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<GradSample>,
}

impl GradReport {
    fn record(&mut self, s: GradSample) {
        self.checked += 1;
        if self.worst.is_none() || s.rel_err > self.max_rel_err {
            self.max_rel_err = s.rel_err;
            self.worst = Some(s);
        }
    }
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Reduces a non-scalar output to a scalar with fixed pseudo-random weights,
/// so every output element takes part in the check.
fn scalarize(g: &mut Graph<f64>, out: Var) -> Result<Var> {
    if g.shape(out).is_empty() {
        return Ok(out);
    }
    let shape = g.shape(out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let w = g.constant(Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0)));
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

fn pick(len: usize, samples: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match samples {
        Some(k) if k < len => (0..k).map(|_| rng.random_range(0..len)).collect(),
        _ => (0..len).collect(),
    }
}

/// Checks `d f(inputs) / d inputs` for a function built on a fresh graph.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], f: F, opts: &GradOptions) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>], grads: bool| -> Result<(f64, Vec<Option<Tensor<f64>>>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone(), grads)).collect();
        let out = f(&mut g, &vars)?;
        let loss = scalarize(&mut g, out)?;
        let value = g.value(loss).item();
        if grads {
            g.backward(loss)?;
        }
        Ok((value, vars.iter().map(|&v| g.grad(v).cloned()).collect()))
    };
    let (_, grads) = eval(inputs, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, x) in inputs.iter().enumerate() {
        for idx in pick(x.len(), opts.samples, &mut rng) {
            let orig = x.data()[idx];
            work[k].data_mut()[idx] = orig + opts.h;
            let plus = eval(&work, false)?.0;
            work[k].data_mut()[idx] = orig - opts.h;
            let minus = eval(&work, false)?.0;
            work[k].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let analytic = grads[k].as_ref().map_or(0.0, |g| g.data()[idx]);
            report.record(GradSample {
                input: k,
                index: idx,
                analytic,
                numeric,
                rel_err: rel_err(analytic, numeric, opts.floor),
            });
        }
    }
    Ok(report)
}

/// Checks parameter gradients of a loss computed through a [`Ctx`] over
/// `store`. `params` lists the tensors to probe; `input` of each sample is
/// the position in that list.
pub fn check_store<F>(
    store: &mut ParamStore<f64>,
    params: &[ParamId],
    mode: Mode,
    f: F,
    opts: &GradOptions,
) -> Result<GradReport>
where
    F: Fn(&mut Ctx<'_, f64>) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>, grads: bool| -> Result<(f64, Vec<Option<Tensor<f64>>>)> {
        let mut ctx = Ctx::new(store, mode);
        let loss = f(&mut ctx)?;
        if !ctx.graph.shape(loss).is_empty() {
            return Err(Error::Usage(format!("loss must be a scalar, got shape {:?}", ctx.graph.shape(loss))));
        }
        let value = ctx.graph.value(loss).item();
        if grads {
            ctx.graph.backward(loss)?;
            return Ok((value, ctx.param_grads()));
        }
        Ok((value, Vec::new()))
    };
    let (_, grads) = eval(store, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradReport::default();
    for (k, &id) in params.iter().enumerate() {
        for idx in pick(store.get(id).len(), opts.samples, &mut rng) {
            let orig = store.get(id).data()[idx];
            store.get_mut(id).data_mut()[idx] = orig + opts.h;
            let plus = eval(store, false)?.0;
            store.get_mut(id).data_mut()[idx] = orig - opts.h;
            let minus = eval(store, false)?.0;
            store.get_mut(id).data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let analytic = grads[id.index()].as_ref().map_or(0.0, |g| g.data()[idx]);
            report.record(GradSample {
                input: k,
                index: idx,
                analytic,
                numeric,
                rel_err: rel_err(analytic, numeric, opts.floor),
            });
        }
    }
    Ok(report)
}
