use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point is not on the unit sphere (|x| = {norm})")]
    NotUnit { norm: f64 },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("source lies inside the convex hull of the domain (best separation {separation:.3e})")]
    Infeasible { separation: f64 },

    #[error("parameter out of range: {name} = {value} ({expected})")]
    OutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("kernel is singular on the diagonal z = y")]
    Singular,

    #[error(
        "field has nonzero mean {mean:.3e}; homogeneous order {order} needs a zero-mode policy"
    )]
    ZeroMode { mean: f64, order: f64 },

    #[error("samples are not supported inside the window: {0}")]
    Support(String),

    #[error("constant calibration failed: fit residual {residual:.3e} exceeds {limit:.3e}")]
    Calibration { residual: f64, limit: f64 },

    #[error(
        "weighted inversion diverged at iteration {iteration}: sup|w-1| = {weight_deviation:.3} \
         (threshold {threshold:.3}), {reason}"
    )]
    Divergence {
        iteration: usize,
        weight_deviation: f64,
        threshold: f64,
        reason: String,
    },

    #[error("grid under-resolves the oscillation: {nodes_per_wavelength:.2} nodes per wavelength, need h <= {required_step:.4e}")]
    UnderResolved {
        nodes_per_wavelength: f64,
        required_step: f64,
    },

    #[error("finite-difference consistency check failed: relative difference {difference:.3e} > {tolerance:.3e}")]
    Consistency { difference: f64, tolerance: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
