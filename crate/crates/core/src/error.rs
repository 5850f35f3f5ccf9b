//! Error type shared across the crate.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// A vector had the wrong length for the model or config it was used with.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// The real system left the true constraint set. This is a bug signal,
    /// not a recoverable state: the run is aborted.
    SafetyBreach(String),
    /// No feasible plan exists at the initial state.
    InfeasibleStart(String),
    /// The shifted candidate of a previously feasible solution failed a
    /// constraint. Must never fire under nominal dynamics.
    RecursiveFeasibilityBreach(String),
    /// A runtime invariant (storage precondition, set update condition) broke.
    InvariantBreach(String),
    /// The steady-state manifold of the queried region is empty.
    NoSteadySetpoint,
    /// The exact solver refused a scenario above its enumeration guard.
    ScenarioTooLarge { estimated: f64, limit: f64 },
    /// The optimization problem has an empty feasible set.
    Infeasible,
    /// A function or constraint evaluated to a non-finite value.
    NumericalDomain { constraint: usize, detail: String },
    /// Predicted and simulated states disagree beyond tolerance.
    ModelInconsistency { norm: f64 },
    /// Scenario or log files could not be parsed.
    Parse(String),
    /// Invalid scenario configuration.
    Config(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                what,
                expected,
                got,
            } => write!(f, "dimension mismatch in {what}: expected {expected}, got {got}"),
            Error::SafetyBreach(s) => write!(f, "safety breach: {s}"),
            Error::InfeasibleStart(s) => write!(f, "no feasible initial plan: {s}"),
            Error::RecursiveFeasibilityBreach(s) => {
                write!(f, "recursive feasibility breach: {s}")
            }
            Error::InvariantBreach(s) => write!(f, "invariant breach: {s}"),
            Error::NoSteadySetpoint => write!(f, "region contains no steady admissible setpoint"),
            Error::ScenarioTooLarge { estimated, limit } => {
                write!(f, "scenario too large for exact solve: ~{estimated:.3e} trajectories (limit {limit:.0e})")
            }
            Error::Infeasible => write!(f, "problem is infeasible"),
            Error::NumericalDomain { constraint, detail } => {
                write!(f, "non-finite value in constraint {constraint}: {detail}")
            }
            Error::ModelInconsistency { norm } => {
                write!(f, "state disagrees with nominal model by {norm:.3e}")
            }
            Error::Parse(s) => write!(f, "parse error: {s}"),
            Error::Config(s) => write!(f, "invalid scenario: {s}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
