use thiserror::Error;

/// Errors raised by the formation library. Vehicle indices are 0-based in
/// the fields and 1-based in the messages.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FormationError {
    #[error("vehicles {} and {} are collocated (distance {distance:e})", .i + 1, .j + 1)]
    CollocatedVehicles { i: usize, j: usize, distance: f64 },

    #[error("collision imminent at t = {t}: vehicles {} and {} are {distance:e} apart", .i + 1, .j + 1)]
    CollisionImminent {
        t: f64,
        i: usize,
        j: usize,
        distance: f64,
    },

    #[error("infeasible target: {0}")]
    InfeasibleTarget(String),

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("trajectory did not converge")]
    NotConverged,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown stepper `{0}`")]
    UnknownStepper(String),
}

pub type Result<T, E = FormationError> = std::result::Result<T, E>;
