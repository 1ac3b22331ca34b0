use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library reports. [`Error::code`] gives a stable
/// machine-readable tag for each variant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("measure has no mass left after canonicalization")]
    EmptyMeasure,
    #[error("weights sum {sum} ≠ 1")]
    InvalidWeights { sum: f64 },
    #[error("negative weight {weight} at atom {index}")]
    NegativeWeight { index: usize, weight: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point map produced a non-finite image at atom {index}")]
    NonFiniteImage { index: usize },
    #[error("potential is not finite at atom {index}")]
    NonFinitePotential { index: usize },
    #[error("transport simplex exceeded {cap} pivots on a {rows}x{cols} instance")]
    SolverStall { cap: usize, rows: usize, cols: usize },
    #[error("unsupported instance: {0}")]
    UnsupportedInstance(String),
    #[error("plan carries no dual potentials and the cycle check does not apply")]
    MissingPotentials,
    #[error("variations are anchored at different measures")]
    AnchorMismatch,
    #[error("gluing does not reproduce the arrow masses: {0}")]
    CouplingMarginalMismatch(String),
    #[error("plan marginals do not match the measures: {0}")]
    MarginalMismatch(String),
    #[error("mixture density vanishes at data point {index}")]
    LogOfZero { index: usize },
    #[error("subgradient requires an optimal plan: {0}")]
    PlanRequired(String),
    #[error("point is infeasible: slack {slack}")]
    InfeasiblePoint { slack: f64 },
    #[error("constraint qualification fails: sublevel subgradient vanishes on the boundary")]
    QualificationFailure,
    #[error("theta must be nonzero")]
    ZeroTheta,
    #[error("no admissible multiplier root ({reason}); roots: {roots:?}")]
    NoValidRoot { roots: Vec<f64>, reason: String },
    #[error("affine map is singular at lambda = {lambda}")]
    SingularMap { lambda: f64 },
    #[error("local descent failed at atom {atom}: gradient norm {grad_norm}")]
    DescentFailure { atom: usize, grad_norm: f64 },
    #[error("{components} components requested but data has {distinct} distinct points")]
    DegenerateInit { components: usize, distinct: usize },
    #[error("inner maximization is unbounded for every multiplier (witness atom {atom})")]
    UnboundedInner { atom: usize },
    #[error("composition needs nonnegative outer partials with plan-valued inner subgradients (term {term})")]
    UnsupportedComposition { term: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::NonFiniteInput(_) => "non_finite_input",
            Error::EmptyMeasure => "empty_measure",
            Error::InvalidWeights { .. } => "invalid_weights",
            Error::NegativeWeight { .. } => "negative_weight",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFiniteImage { .. } => "non_finite_image",
            Error::NonFinitePotential { .. } => "non_finite_potential",
            Error::SolverStall { .. } => "solver_stall",
            Error::UnsupportedInstance(_) => "unsupported_instance",
            Error::MissingPotentials => "missing_potentials",
            Error::AnchorMismatch => "anchor_mismatch",
            Error::CouplingMarginalMismatch(_) => "coupling_marginal_mismatch",
            Error::MarginalMismatch(_) => "marginal_mismatch",
            Error::LogOfZero { .. } => "log_of_zero",
            Error::PlanRequired(_) => "plan_required",
            Error::InfeasiblePoint { .. } => "infeasible_point",
            Error::QualificationFailure => "qualification_failure",
            Error::ZeroTheta => "zero_theta",
            Error::NoValidRoot { .. } => "no_valid_root",
            Error::SingularMap { .. } => "singular_map",
            Error::DescentFailure { .. } => "descent_failure",
            Error::DegenerateInit { .. } => "degenerate_init",
            Error::UnboundedInner { .. } => "unbounded_inner",
            Error::UnsupportedComposition { .. } => "unsupported_composition",
            Error::InvalidParameter(_) => "invalid_parameter",
        }
    }

    /// True for errors caused by malformed input rather than a solver failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteInput(_)
                | Error::EmptyMeasure
                | Error::InvalidWeights { .. }
                | Error::NegativeWeight { .. }
                | Error::DimensionMismatch { .. }
                | Error::NonFiniteImage { .. }
                | Error::NonFinitePotential { .. }
                | Error::AnchorMismatch
                | Error::CouplingMarginalMismatch(_)
                | Error::MarginalMismatch(_)
                | Error::InfeasiblePoint { .. }
                | Error::ZeroTheta
                | Error::InvalidParameter(_)
        )
    }
}
