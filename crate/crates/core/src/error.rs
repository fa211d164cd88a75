use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate factor: factor {factor} has no observed level")]
    DegenerateFactor { factor: u8 },

    #[error("supercritical density: cell probability {max_p:.6} exceeds 1")]
    SupercriticalDensity { max_p: f64 },

    #[error("sinkhorn balancing did not converge after {sweeps} sweeps (achieved eps {achieved:.3e}, target {target:.3e})")]
    SinkhornNonConvergence {
        sweeps: usize,
        achieved: f64,
        target: f64,
    },

    #[error("power iteration did not converge after {iterations} iterations (last estimate {last_estimate})")]
    NonConvergence {
        iterations: usize,
        last_estimate: f64,
        last_iterate: Vec<f64>,
    },

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error("non-geometric chain: spectral radius {0} is not below 1")]
    NonGeometric(f64),

    #[error("zero variance series")]
    ZeroVariance,

    #[error("improper posterior: {0}")]
    ImproperPosterior(String),

    #[error("no observations")]
    NoObservations,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
