use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("f is not positive on the chart box (min {0:.3e})")]
    NonPositiveF(f64),
    #[error("no separating hyperplane between the origin and the domain")]
    HullContainsOrigin,
    #[error("boundary margins leave E empty")]
    EmptyE,
    #[error("point outside the chart box: {0}")]
    OutOfChart(String),
    #[error("unknown function space '{0}'")]
    UnknownSpace(String),
    #[error("Riesz solve failed: {0}")]
    SingularRiesz(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("missing coefficients: {0}")]
    MissingCoefficients(String),
    #[error("inconsistent cutoff thresholds: {0}")]
    InconsistentThresholds(String),
    #[error("smoothing tolerance infeasible: max |F_s - F| = {found:.3e} > {delta:.3e}")]
    DeltaInfeasible { found: f64, delta: f64 },
    #[error("J integral diverges: Re F = {0:.3e} <= 0")]
    QuadratureDivergence(f64),
    #[error("square-root cut meets the support of zeta at xi = {0:?}")]
    BranchCutOnSupport(Vec<f64>),
    #[error("right-hand side vanishes (test function in the discrete kernel)")]
    ZeroRHS,
    #[error("omega lies inside the angular projection of the domain")]
    OmegaInsideProjection,
    #[error("slice touches the axis |x'| = 0")]
    SliceDegenerate,
    #[error("recursion pivot too small: |a1| = {0:.3e}")]
    PivotTooSmall(f64),
    #[error("correction solve failed: {0}")]
    CorrectionSolveFailed(String),
    #[error("zero is a discrete eigenvalue (pivot {0:.3e})")]
    ZeroEigenvalue(f64),
    #[error("gauge function does not vanish on the boundary (max {0:.3e})")]
    NonvanishingBoundaryPsi(f64),
    #[error("mask selects no boundary points: {0}")]
    EmptyMask(String),
    #[error("need at least 3 h values, got {0}")]
    InsufficientHPoints(usize),
    #[error("test function is not holomorphic (dbar residual {0:.3e})")]
    NotHolomorphic(f64),
    #[error("boundary curve is degenerate: {0}")]
    CurveDegenerate(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}
