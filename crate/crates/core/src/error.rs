use alloc::string::String;

/// Errors raised by the tensor engine, the decoder modules and the metrics.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    /// Operand extents do not line up. `detail` names the offending axes.
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    /// A configuration value cannot be honoured (indivisible channels, bad resolution, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// The engine was driven in an unsupported way (non-scalar loss, second backward, ...).
    #[error("usage error: {0}")]
    Usage(String),
    /// Input data violates a documented precondition (non-binary mask, size mismatch, ...).
    #[error("validation error: {0}")]
    Validation(String),
    /// The requested metric has no value for this input.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}
