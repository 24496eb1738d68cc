//! Core of the ICON salient-object-detection decoder.
//!
//! * [`graph`] / [`ops`]: a small eager tensor engine with reverse-mode
//!   differentiation, covering exactly what the decoder needs.
//! * [`dfa`], [`ice`], [`pwv`], [`network`]: the diverse feature aggregation,
//!   integrity channel enhancement and part-whole verification modules, wired
//!   into the full network with a random-init backbone stub.
//! * [`losses`]: the cooperative BCE + IoU loss.
//! * [`metrics`]: MAE, weighted F-measure, S-measure, mean E-measure, FNR and
//!   PR / F-measure curves.
//! * [`optim`]: SGD with momentum, weight decay, warm-up + linear decay and
//!   global-norm gradient clipping.
//!
//! The crate is `no_std` (it needs `alloc`); file formats, image IO and the
//! CLI live in the `icon` companion crate.

#![no_std]

extern crate alloc;

pub mod dfa;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod ice;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod optim;
pub mod params;
pub mod pwv;
pub mod real;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use real::{DType, Real};
pub use tensor::Tensor;
