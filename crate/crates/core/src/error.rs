use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not Hermitian (max |A - A^H| = {deviation:e})")]
    NotHermitian { deviation: f64 },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("eigendecomposition did not converge")]
    ConvergenceFailure,
    #[error("trace {trace} differs from 1")]
    NotUnitTrace { trace: f64 },
    #[error("state has negative eigenvalue {min_eigenvalue:e}")]
    NotPositive { min_eigenvalue: f64 },
    #[error("probabilities not normalized (sum = {sum})")]
    NotNormalized { sum: f64 },
    #[error("negative probability {value:e}")]
    NegativeProbability { value: f64 },
    #[error("basis is not orthonormal (Gram deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },
    #[error("operators do not commute (max |[A, B]| = {norm:e})")]
    NonCommuting { norm: f64 },
    #[error("number operator not conserved by the Hamiltonian (max |[H, N]| = {norm:e})")]
    NonConserving { norm: f64 },
    #[error("unknown outcome {0}")]
    UnknownOutcome(String),
    #[error("relative entropy is infinite (support weight {weight:e} outside reference support)")]
    InfiniteDivergence { weight: f64 },
    #[error("target energy {target} outside spectrum [{min}, {max}]")]
    EnergyOutOfRange { target: f64, min: f64, max: f64 },
    #[error("no (beta, mu) found after {iterations} iterations (residuals {residual_energy:e}, {residual_particles:e})")]
    Unsolvable {
        iterations: usize,
        residual_energy: f64,
        residual_particles: f64,
    },
    #[error("graining labels are not energy windows")]
    WrongLabelKind,
    #[error("time grid mismatch: {0}")]
    GridMismatch(String),
    #[error("effective temperature saturated at sample {index}")]
    SaturatedTemperature { index: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("distributions have different supports: {0}")]
    SupportMismatch(String),
    #[error("invalid initial state: {0}")]
    InvalidInitialState(String),
    #[error("outcome labels do not match: {0}")]
    LabelMismatch(String),
    #[error("invalid model spec: {0}")]
    SpecInvalid(String),
    #[error("invalid config field `{field}`: {message}")]
    ConfigInvalid { field: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
