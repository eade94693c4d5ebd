use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("damping field is not Hermitian: mode {mode:?} differs from the adjoint of its mirror by {defect:e}")]
    NotHermitian { mode: Vec<i32>, defect: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("frequency cutoff N = {cutoff} is below the damping bandwidth K = {bandwidth}")]
    CutoffBelowBandwidth { cutoff: usize, bandwidth: usize },

    #[error("generator side {side} exceeds the dense cap {cap}")]
    ProblemTooLarge { side: usize, cap: usize },

    #[error("eigensolver failed to converge on a {side}x{side} matrix")]
    EigenSolver { side: usize },

    #[error("singular value decomposition failed on a {rows}x{cols} matrix")]
    Svd { rows: usize, cols: usize },

    #[error("frame lost rank at t = {time}: diagonal magnitude {magnitude:e}")]
    RankLoss { time: f64, magnitude: f64 },

    #[error("lambda = {lambda} is beyond the reliable limit {limit}")]
    BeyondReliableLimit { lambda: f64, limit: f64 },

    #[error("time step {dt:e} is at or above the stability threshold {threshold:e}")]
    UnstableStep { dt: f64, threshold: f64 },

    #[error("symbol has no closed-form Gaussian mollification")]
    NoMollification,

    #[error("symbol support {symbol:?} exceeds the quadrature region {region:?}")]
    SupportOutsideRegion { symbol: [f64; 4], region: [f64; 4] },

    #[error("coherent state of width {width:e} is not resolved: {reason}")]
    Unresolved { width: f64, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
