//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Fock space dimension {required} exceeds the configured cap {cap}")]
    DimensionOverflow { required: u128, cap: usize },

    #[error("lattice must have at least one site")]
    NoSites,

    #[error("site index {site} out of range for {n_sites} sites")]
    SiteOutOfRange { site: usize, n_sites: usize },

    #[error("bond {site} wraps around the lattice but the boundary is open")]
    OpenBoundaryWrap { site: usize },

    #[error("momentum index {index} is off the {n_sites}-site grid")]
    MomentumOffGrid { index: i64, n_sites: usize },

    #[error("momentum index {index} is outside the reduced Brillouin zone for {n_sites} sites")]
    OutsideReducedZone { index: i64, n_sites: usize },

    #[error("operation requires an even number of sites, got {n_sites}")]
    OddSiteCount { n_sites: usize },

    #[error("operators act on different bases")]
    BasisMismatch,

    #[error("coupling coefficient list has length {got}, expected {expected}")]
    CoefficientLengthMismatch { expected: usize, got: usize },

    #[error("operator is not Hermitian (defect {defect:.3e})")]
    NonHermitian { defect: f64 },

    #[error("projector set is not complete (defect {defect:.3e})")]
    IncompleteProjectors { defect: f64 },

    #[error("projector set failed the {check} check (value {value:.3e}, tolerance {tol:.3e})")]
    ProjectorCheckFailed {
        check: &'static str,
        value: f64,
        tol: f64,
    },

    #[error(
        "commutator [{lhs}, {rhs}] has norm {norm:.3e} above tolerance {tol:.3e}; \
         the emergent subspaces are inconsistent (tolerance misconfiguration?)"
    )]
    CommutatorCheckFailed {
        lhs: &'static str,
        rhs: &'static str,
        norm: f64,
        tol: f64,
    },

    #[error(
        "jump requested at t = {time:.6} but the jump operator annihilates the state \
         (|a psi|^2 / |psi|^2 = {ratio:.3e}); dark-state numerical edge"
    )]
    DarkStateEdge { time: f64, ratio: f64 },

    #[error("step size underflow at t = {time:.6} (dt = {dt:.3e})")]
    StepSizeUnderflow { time: f64, dt: f64 },

    #[error("{quantity} drifted to {value:.3e} at t = {time:.6}, tolerance {tol:.3e}")]
    ToleranceBreach {
        quantity: &'static str,
        value: f64,
        tol: f64,
        time: f64,
    },

    #[error("density-matrix dimension {dim} exceeds the master-equation cap {cap}")]
    MasterDimensionCap { dim: usize, cap: usize },

    #[error("state is not normalized (norm {norm})")]
    NotNormalized { norm: f64 },

    #[error("trajectories do not share a common snapshot grid")]
    SnapshotGridMismatch,

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("distribution update produced zero total weight (inconsistent photocount input)")]
    AllZeroWeight,

    #[error("invalid distribution: {reason}")]
    InvalidDistribution { reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("TOML parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("TOML serialize error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems, 3 for
    /// numerical-tolerance failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::TomlDe(_) | Error::TomlSer(_) => 2,
            Error::NonHermitian { .. }
            | Error::IncompleteProjectors { .. }
            | Error::ProjectorCheckFailed { .. }
            | Error::CommutatorCheckFailed { .. }
            | Error::DarkStateEdge { .. }
            | Error::StepSizeUnderflow { .. }
            | Error::ToleranceBreach { .. }
            | Error::AllZeroWeight
            | Error::NotNormalized { .. } => 3,
            _ => 1,
        }
    }
}
