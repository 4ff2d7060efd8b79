use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid system parameters: {0}")]
    InvalidParams(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("relay {relay}: power level {level} needs {spend} energy packets but battery holds {battery}")]
    InfeasibleAction {
        relay: usize,
        level: usize,
        spend: u32,
        battery: u32,
    },

    #[error("power level {level} is not affordable with battery {battery}")]
    InfeasibleLevel { level: usize, battery: u32 },

    #[error("anchor state (b*={buffer}, e*={battery}) not reached within {slots} slots")]
    AnchorNotReached {
        buffer: u32,
        battery: u32,
        slots: u64,
    },

    #[error(
        "renewal cycle exceeded {cap} slots without revisiting anchor (b*={buffer}, e*={battery})"
    )]
    CycleTooLong { cap: u64, buffer: u32, battery: u32 },

    #[error("state space too large for exact model: |S|*|A| = {size} exceeds cap {cap}")]
    StateSpaceTooLarge { size: u128, cap: u128 },

    #[error("policy chain is not unichain: {unreachable} reduced states cannot reach the anchor")]
    NotUnichain { unreachable: usize },

    #[error(
        "relative value iteration did not converge after {iterations} iterations (span {span:e})"
    )]
    RviNotConverged { iterations: usize, span: f64 },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParams(_) => 1,
            Error::StateSpaceTooLarge { .. } => 3,
            _ => 2,
        }
    }
}
