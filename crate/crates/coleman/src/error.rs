//! One error enum for the whole crate.
//!
//! Variants split into three families, which the CLI maps onto exit codes:
//! mathematical failures (a checked identity does not hold; exit 1), budget
//! or precondition failures (the request cannot be served at the given
//! degree/precision, or an input violates a documented precondition; exit 2),
//! and environment failures (I/O, malformed files; also exit 2).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // ---- tower construction and element arithmetic ----
    #[error("{0} is not prime")]
    NotPrime(u64),
    #[error("defining polynomial for {level}: {reason}")]
    BadDefiningPolynomial { level: &'static str, reason: String },
    #[error("operands belong to different towers")]
    MixedTowers,
    #[error("element is zero at the working precision; valuation/division undefined")]
    ZeroAtPrecision,
    #[error("not a unit: valuation {valuation} > 0")]
    NotAUnit { valuation: u32 },
    #[error("exact division failed: needed valuation >= {needed}, found {found}")]
    DivisibilityFailure { needed: u32, found: u32 },

    // ---- series operations ----
    #[error("series belong to different towers")]
    SeriesTowerMismatch,
    #[error("divergent substitution: argument has unit constant term and the outer series may continue past its degree cap")]
    Divergence,
    #[error("de-substitution failed at degree {degree}: coefficient not divisible by the required power of sigma_1")]
    NotInImage { degree: usize },
    #[error("insufficient precision at degree {degree}: congruence modulo pi^{needed} requested, only pi^{available} available")]
    InsufficientPrecision { degree: usize, needed: u32, available: u32 },
    #[error("coefficient at degree {degree} is not integral (denominator exponent {denominator} exceeds numerator valuation)")]
    NonIntegral { degree: usize, denominator: u32 },

    // ---- formal groups ----
    #[error("invalid Frobenius series: {0}")]
    InvalidFrobenius(String),
    #[error("group-law induction: defect at total degree {degree} not divisible by pi^n - pi")]
    DefectDivision { degree: usize },
    #[error("transport domain: coefficient {index} has valuation {found}, needs >= {needed}")]
    TransportDomain { index: usize, needed: u32, found: u32 },

    // ---- trace operator ----
    #[error("descent failed: u^{component}-component of the root sum survives at x-degree {x_degree}")]
    DescentResidual { x_degree: usize, component: usize },
    #[error("linear system inconsistent at the working truncation (row {row})")]
    InconsistentSystem { row: usize },
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    // ---- eigenspace maps ----
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("standing hypotheses violated: {}", .0.join("; "))]
    HypothesisViolated(Vec<String>),
    #[error("iteration stalled at stage {stage}: increment valuation {valuation} did not grow")]
    ConvergenceStalled { stage: usize, valuation: u32 },
    #[error("lifting stage {stage} failed: {reason}")]
    LiftStage { stage: usize, reason: String },
    #[error("membership check ({kind}) failed at degree {degree}")]
    MembershipRejected { kind: &'static str, degree: usize },

    // ---- configuration and I/O ----
    #[error("config: {0}")]
    Config(String),
    #[error("series file refers to tower {found:?}, active tower is {expected:?}")]
    TowerRefMismatch { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    // ---- invariants that must hold when preconditions do ----
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    /// Exit code contract: 0 = success, 1 = a mathematical check failed,
    /// 2 = budget/precondition/environment error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotInImage { .. }
            | Error::DefectDivision { .. }
            | Error::DescentResidual { .. }
            | Error::InconsistentSystem { .. }
            | Error::MembershipRejected { .. }
            | Error::Internal(_) => 1,
            _ => 2,
        }
    }
}
