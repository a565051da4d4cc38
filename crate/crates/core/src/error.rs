use thiserror::Error;

/// Errors produced by grid construction, covariance evaluation, sampling,
/// and inference routines.
#[derive(Debug, Error)]
pub enum LgcpError {
    /// An argument failed validation (empty window, out-of-range parameter,
    /// mismatched lengths, and so on).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The circulant embedding of the covariance on the extended torus has a
    /// negative eigenvalue too large to clamp. Enlarging the grid extension
    /// factor usually fixes this.
    #[error(
        "circulant embedding failed: eigenvalue {min_eigenvalue:.6e} is below the \
         clamp tolerance -{tolerance:.6e}; increase the grid extension factor"
    )]
    EmbeddingFailure { min_eigenvalue: f64, tolerance: f64 },

    /// A linear predictor grew large enough that exponentiating it would
    /// overflow. Reported instead of silently producing infinities.
    #[error("numerical overflow: linear predictor reached {max_linear_predictor:.3}")]
    NumericalOverflow { max_linear_predictor: f64 },

    /// Not enough data to carry out the requested computation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Fewer retained posterior samples than the operation requires.
    #[error("insufficient samples: have {have}, need at least {need}")]
    InsufficientSamples { have: usize, need: usize },

    /// An optimizer failed to produce a usable answer.
    #[error("optimization failed: {0}")]
    OptimizationFailure(String),

    /// A region has a positive observed total but no cell able to receive it.
    #[error("degenerate region {region}: total {total} > 0 but every cell mean is zero")]
    DegenerateRegion { region: u32, total: u64 },

    /// The sampler hit a non-recoverable numerical failure at a known iteration.
    #[error("chain failed at iteration {iteration}: {message}")]
    ChainFailure { iteration: usize, message: String },

    /// A text input (CSV, config, raster header) could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LgcpError>;

impl LgcpError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        LgcpError::InvalidInput(msg.into())
    }
}
