use std::io;

/// Errors produced by the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("grid is {got_n}x{got_m}, expected {want_n}x{want_m}")]
    DimensionMismatch {
        want_n: usize,
        want_m: usize,
        got_n: usize,
        got_m: usize,
    },

    #[error("estimation windows of users {first} and {second} overlap")]
    OverlappingUsers { first: usize, second: usize },

    #[error("guard region of user {user} does not fit in the grid")]
    GuardExceedsGrid { user: usize },

    #[error("got {frames} frames but {channels} channel realizations")]
    UserCountMismatch { frames: usize, channels: usize },

    #[error("user {0} has zero pilot power")]
    ZeroPilotPower(usize),

    #[error("true channel has zero energy")]
    ZeroEnergyTruth,

    #[error("problem dimension {dim} exceeds the oracle cap of {cap}")]
    OracleTooLarge { dim: usize, cap: usize },

    #[error("allocation invariant violated: {0}")]
    AllocationInvariant(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
