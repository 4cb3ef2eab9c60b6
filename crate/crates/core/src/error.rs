use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix exponential out of representable range ({0})")]
    Range(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(String),
    #[error("more inputs than states: M = {m} > N = {n}")]
    TooManyInputs { m: usize, n: usize },
    #[error("state dimension {0} outside supported range 2..=8")]
    UnsupportedDimension(usize),
    #[error("system is not normal (Kalman ranks {0:?}); operation requires normality")]
    NotNormal(Vec<usize>),
    #[error("channel {channel} out of range (M = {m})")]
    Channel { channel: usize, m: usize },
    #[error("costate must be nonzero")]
    ZeroCostate,
    #[error("singular set is empty (rank B = N)")]
    SingularSetEmpty,
    #[error("costate is not orthogonal to the input columns (defect {0:e})")]
    NotInZ(f64),
    #[error("no bracket for the minimum time up to t = {0}; point unreachable at desk scale")]
    Unreachable(f64),
    #[error("did not converge: {0}")]
    NoConvergence(String),
    #[error("tau = {tau} exceeds the validated small-time bound {bound}")]
    TauTooLarge { tau: f64, bound: f64 },
    #[error("verification failed at r = {r}: {detail}")]
    VerificationFailed { r: f64, detail: String },
    #[error("assumption {number} violated: {detail}")]
    Assumption { number: u8, detail: String },
    #[error("expression error: {0}")]
    Expression(String),
    #[error("outside validated regime: {0}")]
    Regime(String),
    #[error("unknown catalog entry '{name}'; available: {available}")]
    UnknownCatalog { name: String, available: String },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
