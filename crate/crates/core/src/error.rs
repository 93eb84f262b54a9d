use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("pair (A, B) is not stabilizable: uncontrollable mode at {eigenvalue}")]
    NotStabilizable { eigenvalue: String },

    #[error("pair (Q, A) is not detectable: unobservable mode on the imaginary axis at {eigenvalue}")]
    NotDetectable { eigenvalue: String },

    #[error("Hamiltonian has no stabilizing solution: {0}")]
    NoStabilizingSolution(String),

    #[error("Riccati solution is ill-conditioned: relative residual {residual:.3e} exceeds {tolerance:.1e}")]
    IllConditioned { residual: f64, tolerance: f64 },

    #[error("matrix is not Hurwitz: eigenvalue with real part {max_real_part:.6e}")]
    NotHurwitz { max_real_part: f64 },

    #[error("measurement noise covariance is singular")]
    DegenerateMeasurement,

    #[error("resolvent is numerically singular at omega = {omega:.6e} rad/s (condition {condition:.3e})")]
    SingularResolvent { omega: f64, condition: f64 },

    #[error("cannot convert {value} to dB: value must be positive")]
    NonPositive { value: f64 },

    #[error("Newton refinement failed for root candidate {candidate}")]
    NoConvergence { candidate: String },

    #[error("all delays are zero; use the ordinary eigenvalues of the collapsed drift")]
    DegenerateDelay,

    #[error("invalid frequency grid: {0}")]
    InvalidGrid(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
