use thiserror::Error;

/// Errors raised across the laboratory.
///
/// Variants split into two families: precondition failures (bad input, a
/// violated hypothesis) and numerical faults (an algorithm that ran but did
/// not behave). [`Error::is_numerical`] tells them apart; the CLI maps them
/// to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported dimension d = {0}")]
    UnsupportedDimension(usize),

    #[error(
        "enumeration budget exceeded: |k|_1 <= {cutoff} in d = {dim} needs {points} lattice points, budget is {budget}"
    )]
    EnumerationBudget {
        cutoff: u32,
        dim: usize,
        points: u128,
        budget: u128,
    },

    #[error("series is not real-valued: imaginary residual {residual:e} exceeds {tolerance:e}")]
    RealityViolation { residual: f64, tolerance: f64 },

    #[error("homological equation: mean (k = 0) term present at m = {m:?}")]
    MeanNotRemoved { m: Vec<u32> },

    #[error("small divisor |omega.k| = {divisor:e} below floor {floor:e} at k = {k:?}")]
    SmallDivisor { k: Vec<i32>, divisor: f64, floor: f64 },

    #[error("Lie series diverged at order {order}: bracket norm grew by {growth:e}")]
    Divergence { order: usize, growth: f64 },

    #[error("smallness condition violated: |||f||| = {lhs:e} > alpha*rho/(256*xi*K) = {rhs:e}")]
    Smallness { lhs: f64, rhs: f64 },

    #[error("normal form parameters invalid: {0}")]
    Parameters(String),

    #[error("model violation: {0}")]
    ModelViolation(String),

    #[error("dominance violated: ell = {ell} must exceed 3 + 2/tau = {bound}")]
    Dominance { ell: f64, bound: f64 },

    #[error("flow left the domain |I| <= {radius:e} (reached {reached:e})")]
    DomainEscape { radius: f64, reached: f64 },

    #[error("implicit step failed to converge at t = {t} after {iterations} sweeps (last update {update:e})")]
    StepFailure { t: f64, iterations: usize, update: f64 },

    #[error("escape at t = {time:e} beats the ballistic bound {bound:e}")]
    BallisticViolation { time: f64, bound: f64 },

    #[error("sample {index}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stage {stage}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for faults of a numerical algorithm, false for precondition and
    /// input errors.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::RealityViolation { .. }
            | Error::SmallDivisor { .. }
            | Error::Divergence { .. }
            | Error::DomainEscape { .. }
            | Error::StepFailure { .. }
            | Error::BallisticViolation { .. } => true,
            Error::Sample { source, .. } | Error::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn stage(stage: &'static str, source: Error) -> Self {
        Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
