//! Named parameter storage and the per-forward binding context.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::{Graph, Var};
use crate::ops::norm::BatchStats;
use crate::real::math;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Trainable weights versus state that is carried but never differentiated
/// (batch-norm running statistics).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub kind: ParamKind,
}

/// Ordered collection of named tensors. Registration order is stable and is
/// the order used by checkpoints and optimizers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<T>, kind: ParamKind) -> ParamId {
        debug_assert!(self.find(name).is_none(), "duplicate parameter name {name}");
        self.entries.push(ParamEntry { name: name.to_string(), tensor, kind });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn weight_count(&self) -> usize {
        self.entries.iter().filter(|e| e.kind == ParamKind::Weight).map(|e| e.tensor.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), tensor: e.tensor.cast(), kind: e.kind })
                .collect(),
        }
    }
}

/// He-normal initialised weight (`std = sqrt(2 / fan_in)`).
pub fn he_normal<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let std = math::sqrt(2.0 / fan_in as f64);
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::cst(normal.sample(rng)))
}

/// Whether batch norms use mini-batch statistics or running averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) struct StatUpdate<T> {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats<T>,
}

/// One forward pass: a fresh graph plus the lazily created leaves for the
/// parameters it touches. A parameter used at several call sites (shared
/// modules) is bound once, so its gradient accumulates across all of them.
pub struct Ctx<'s, T> {
    pub graph: Graph<T>,
    store: &'s ParamStore<T>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    stat_updates: Vec<StatUpdate<T>>,
}

impl<'s, T: Real> Ctx<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: Mode) -> Self {
        Self { graph: Graph::new(), store, bound: vec![None; store.len()], mode, stat_updates: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn var(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let e = &self.store.entries[id.0];
        let v = self.graph.leaf(e.tensor.clone(), e.kind == ParamKind::Weight);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.graph.constant(t)
    }

    pub(crate) fn record_stats(&mut self, mean: ParamId, var: ParamId, stats: BatchStats<T>) {
        self.stat_updates.push(StatUpdate { mean, var, stats });
    }

    /// Gradients aligned with the store; `None` for buffers and parameters
    /// this pass never touched.
    pub fn param_grads(&self) -> Vec<Option<Tensor<T>>> {
        self.bound.iter().map(|b| b.and_then(|v| self.graph.grad(v).cloned())).collect()
    }

    /// Folds the observed batch statistics into the running averages
    /// (`running = (1 - momentum) * running + momentum * batch`).
    pub fn apply_running_stats(&self, store: &mut ParamStore<T>, momentum: T) {
        apply_stats(&self.stat_updates, store, momentum);
    }

    /// Moves the observed batch statistics out, so they can be applied after
    /// the pass has released the store.
    pub fn take_running_stats(&mut self) -> RunningStats<T> {
        RunningStats(core::mem::take(&mut self.stat_updates))
    }
}

/// Batch statistics detached from a finished pass.
pub struct RunningStats<T>(Vec<StatUpdate<T>>);

impl<T: Real> RunningStats<T> {
    pub fn apply(&self, store: &mut ParamStore<T>, momentum: T) {
        apply_stats(&self.0, store, momentum);
    }
}

fn apply_stats<T: Real>(updates: &[StatUpdate<T>], store: &mut ParamStore<T>, momentum: T) {
    for u in updates {
        for (id, fresh) in [(u.mean, &u.stats.mean), (u.var, &u.stats.var)] {
            for (r, &b) in store.get_mut(id).data_mut().iter_mut().zip(fresh) {
                *r = (T::one() - momentum) * *r + momentum * b;
            }
        }
    }
}
