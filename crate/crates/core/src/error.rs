use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { pos: usize, name: String },

    #[error("variable x{index} out of range for dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("offset {0:?} outside the interaction range")]
    OffsetOutOfRange(Vec<i64>),

    #[error("lattice sites live on different spacings ({0} vs {1})")]
    MismatchedSpacing(f64, f64),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("integrator step size collapsed at t = {t} (h = {step:e})")]
    StepCollapse { t: f64, step: f64 },

    #[error("no geodesic found from {y:?} to {x:?}")]
    NoGeodesic { y: Vec<f64>, x: Vec<f64> },

    #[error("minimizing geodesic is not unique: {count} minimizers with d_F = {distance}")]
    UniquenessViolated { count: usize, distance: f64 },

    #[error("conjugate point along the geodesic (bordered determinant {0:e})")]
    Conjugate(f64),

    #[error("model is not translation invariant (|grad| = {0:e})")]
    NotTranslationInvariant(f64),

    #[error("symbol denominator margin {0:e} too small; shift lies outside the polar body")]
    DenominatorMargin(f64),

    #[error("quadrature refinement reached the node cap {0}")]
    QuadratureCap(usize),

    #[error("box of {sites} sites exceeds the cap {cap}")]
    BoxCap { sites: usize, cap: usize },

    #[error("linear solver breakdown: {0}")]
    SolverBreakdown(String),

    #[error("hypothesis check failed: {0}")]
    Hypothesis(String),
}

impl Error {
    /// Failures that come from the geometry of the problem rather than
    /// from numerics or bad input.
    pub fn is_geometric(&self) -> bool {
        matches!(self, Error::UniquenessViolated { .. } | Error::Conjugate(_))
    }
}
