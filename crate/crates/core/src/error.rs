use thiserror::Error;

/// Everything that can go wrong in the library.
///
/// Numeric payloads are stored as `f64` regardless of the scalar type in use.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("non-integer exponent at byte {offset}")]
    NonIntegerExponent { offset: usize },
    #[error("division by zero at t = {t}")]
    DivisionByZero { t: f64 },
    #[error("overflow evaluating expression at t = {t}")]
    Overflow { t: f64 },
    #[error("invalid operator: {0}")]
    InvalidOperator(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-hyperbolic: complex root (imaginary part {imag:e}) at t = {t}, xi = {xi:?}")]
    NonHyperbolic { t: f64, xi: Vec<f64>, imag: f64 },
    #[error("root collision: gap {gap:e} at t = {t}, xi = {xi:?}")]
    RootCollision { t: f64, xi: Vec<f64>, gap: f64 },
    #[error("divergent moment: coefficient {index} has non-integrable derivative")]
    DivergentMoment { index: usize },
    #[error("quadrature failed to reach tolerance on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },
    #[error("step size collapsed at t = {t}")]
    StepSizeCollapse { t: f64 },
    #[error("tail not converged; required t_max >= {required_t_max}")]
    TailNotConverged { required_t_max: f64 },
    #[error("graph chart breakdown at sigma = {sigma:?}")]
    ChartBreakdown { sigma: Vec<f64> },
    #[error("contact order exceeds gamma_max = {gamma_max} at sigma = {sigma:?}")]
    OrderExceeds { gamma_max: usize, sigma: Vec<f64> },
    #[error("phase is not positive at direction {direction:?}")]
    NotPositive { direction: Vec<f64> },
    #[error("phase is not homogeneous of degree one (relative defect {defect:e})")]
    NotHomogeneous { defect: f64 },
    #[error("shifted branch {branch} is not sign-definite on the sphere")]
    NotSignDefinite { branch: usize },
    #[error("resolution cap exceeded: {needed} evaluations needed, budget {budget}")]
    ResolutionCap { needed: usize, budget: usize },
    #[error("data spectrum not resolved: relative magnitude {level:e} beyond |xi| = {cutoff}")]
    Unresolved { level: f64, cutoff: f64 },
    #[error("box too small: half-width {half_width} < required {required}")]
    BoxTooSmall { half_width: f64, required: f64 },
    #[error("Sobolev exponent {s} too negative: nonzero mean spectrum")]
    SobolevExponent { s: f64 },
    #[error("fit window holds {points} points, need at least {needed}")]
    FitWindow { points: usize, needed: usize },
    #[error("non-positive magnitude in fit window at {at}")]
    NonPositiveMagnitude { at: f64 },
    #[error("bound violated: {0}")]
    BoundViolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            NonHyperbolic { .. } | RootCollision { .. } => 2,
            Quadrature { .. }
            | StepSizeCollapse { .. }
            | TailNotConverged { .. }
            | DivergentMoment { .. }
            | BoundViolation(_) => 3,
            ResolutionCap { .. } | Unresolved { .. } | BoxTooSmall { .. } => 4,
            _ => 1,
        }
    }
}
