use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: lower bound {lower} is not below upper bound {upper} (axis {axis})")]
    InvalidBox { axis: usize, lower: f64, upper: f64 },

    #[error("invalid dimension or size: {0}")]
    InvalidDim(String),

    #[error("order {value} out of range (0, 2]{}", .at.as_ref().map(|p| format!(" at {p:?}")).unwrap_or_default())]
    OrderOutOfRange { value: f64, at: Option<Vec<f64>> },

    #[error("domain mask selects no interior node")]
    EmptyDomain,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("missing weight table for order {alpha}")]
    MissingWeights { alpha: f64 },

    #[error("operator has no low-rank plan configured")]
    PlanMissing,

    #[error("quadrature size {m} too coarse for {nodes} nodes per axis (need m >= {required})")]
    QuadratureTooCoarse { m: usize, nodes: usize, required: usize },

    #[error("quadrature size {0} must be a power of two >= 2")]
    InvalidQuadrature(usize),

    #[error("imaginary residue {residue:e} of inverse DFT exceeds {limit:e}")]
    ImaginaryResidue { residue: f64, limit: f64 },

    #[error("invalid interpolation range [{min}, {max}]")]
    InvalidRange { min: f64, max: f64 },

    #[error("interpolation argument {t} outside [{min}, {max}]")]
    OutOfRange { t: f64, min: f64, max: f64 },

    #[error("rank cap {cap} exceeded: best error {best_error:e} above tolerance {epsilon:e}")]
    RankCapExceeded { cap: usize, best_error: f64, epsilon: f64 },

    #[error("1F1 parameter b = {0} is a nonpositive integer")]
    PoleInB(f64),

    #[error("1F1 argument z = {0} outside supported range |z| <= 200")]
    RangeExceeded(f64),

    #[error("normalization constant is singular at alpha = {0}")]
    SingularConstant(f64),

    #[error("far-field tail bound {bound:e} exceeds tolerance {tol:e}; increase the cutoff")]
    TailTooLarge { bound: f64, tol: f64 },

    #[error("adaptive quadrature did not reach tolerance (estimate {estimate:e})")]
    QuadratureNonConvergent { estimate: f64 },

    #[error("coarse grid is not nested in the reference grid: {0}")]
    NotNested(String),

    #[error("anisotropic grid steps {0:?}; the operator needs equal steps")]
    AnisotropicGrid(Vec<f64>),

    #[error(transparent)]
    Krylov(#[from] crate::solver::KrylovError),

    #[error("config: {0}")]
    Config(String),

    #[error("expression: {0}")]
    Expression(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the failure came out of an iterative solve rather than from input validation.
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::Krylov(_))
    }
}
