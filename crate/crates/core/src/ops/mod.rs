//! Differentiable operations recorded on a [`Graph`](crate::graph::Graph).

pub mod conv;
pub mod elementwise;
pub mod linalg;
pub mod loss;
pub mod norm;
pub mod reduce;
pub mod resample;
pub mod shape;

pub use conv::ConvGeom;
pub use norm::NORM_EPS;
pub use resample::ResampleMode;
