use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("subsystem index {index} out of range for {count} subsystems")]
    SubsystemIndex { index: usize, count: usize },

    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("non-finite matrix entry")]
    NonFinite,

    #[error("{what} is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositive { what: String, min_eigenvalue: f64 },

    #[error("invalid trace for {what}: {trace}")]
    Trace { what: String, trace: f64 },

    #[error("POVM elements do not sum to identity (max deviation {deviation:.3e})")]
    Completeness { deviation: f64 },

    #[error("vector is not normalized (norm {norm})")]
    NotNormalized { norm: f64 },

    #[error("Schmidt-number threshold k = {k} outside 1..={max}")]
    InvalidK { k: usize, max: usize },

    #[error("map is not linear (deviation {deviation:.3e})")]
    NonLinearMap { deviation: f64 },

    #[error("{0}")]
    Contract(String),

    #[error("no Schmidt-number decomposition found within budget (residual {residual:.3e})")]
    DecompositionFailed { residual: f64 },

    #[error("conic solver failure: {0}")]
    Solver(String),

    #[error("numerical breakdown in {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
