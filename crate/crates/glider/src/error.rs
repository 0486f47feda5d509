use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {context}: {component}")]
    NonFinite {
        context: &'static str,
        component: String,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("integration blew up: component {component} became non-finite")]
    BlowUp { component: &'static str },

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("trace too short: {len} steps (need at least {min})")]
    TraceTooShort { len: usize, min: usize },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("torque schedule exhausted at t={0}")]
    ScheduleExhausted(f64),

    #[error("torque schedule gap at t={0}")]
    ScheduleGap(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
