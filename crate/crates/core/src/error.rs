use std::path::PathBuf;

use thiserror::Error;

use crate::case::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read case file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed case document: {0}")]
    Parse(String),

    #[error("invalid case:\n{0}")]
    InvalidCase(ValidationReport),

    #[error("unknown built-in case `{0}` (expected one of smib, ieee39_sync, ieee39_gfl2)")]
    UnknownCase(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} pu)")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("equilibrium residual {residual:.3e} exceeds tolerance at {device}")]
    Initialization { device: String, residual: f64 },

    #[error("inconsistent case: {0}")]
    Inconsistent(String),

    #[error("branch {0} is not in service")]
    BranchOutOfService(String),

    #[error("branch {0} does not exist")]
    UnknownBranch(String),

    #[error("branch {0} matches {1} parallel circuits; name one as A-B#c")]
    AmbiguousBranch(String, usize),

    #[error("network is islanded in phase {phase}: buses {buses:?} have no path to a source")]
    Islanded { phase: String, buses: Vec<usize> },

    #[error("singular network block while eliminating buses {0:?}")]
    SingularNetwork(Vec<usize>),

    #[error("algebraic equations did not converge after {iterations} iterations (last change {change:.3e})")]
    AlgebraicDiverged { iterations: usize, change: f64 },

    #[error("integrator failed at t = {t:.4} s: {reason}")]
    Integration { t: f64, reason: String },

    #[error("algebraic Jacobian is singular (condition estimate {condition:.3e})")]
    SingularAlgebraicJacobian { condition: f64 },

    #[error("invalid bracket: {0}")]
    InvalidBracket(String),

    #[error("sensitivity is identically zero (m(SN) = 0); the scenario perturbs nothing")]
    ZeroSensitivity,

    #[error("probe at T_cl = {t_cl:.4} s is unusable: {reason}")]
    ProbeFailed { t_cl: f64, reason: String },

    #[error("extrapolation failed: {0}")]
    Extrapolation(String),

    #[error("{0}")]
    Invalid(String),

    #[error("export failed: {0}")]
    Export(String),
}
