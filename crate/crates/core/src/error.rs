use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid microgrid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible operating point: discriminant {discriminant:.6e} < 0, constant-power load cannot be supplied")]
    Infeasible { discriminant: f64 },

    #[error("slot {slot}: {source}")]
    InfeasibleSlot {
        slot: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid training plan: {0}")]
    InvalidPlan(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("insufficient excitation: numerical rank {rank} < {required} (reciprocal condition {rcond:.3e})")]
    InsufficientExcitation { rank: usize, required: usize, rcond: f64 },

    #[error("singular sensitivity at slot {slot}: lambda = {lambda:.3e}")]
    SingularSensitivity { slot: usize, lambda: f64 },

    #[error("singular Fisher information (reciprocal condition {rcond:.3e}), weakest direction {direction:?}")]
    SingularInformation { rcond: f64, direction: Vec<f64> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
