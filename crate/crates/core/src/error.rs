use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coincident spins: zero-length displacement vector")]
    CoincidentSpins,

    #[error("Hilbert-space dimension {dim} exceeds the cap {cap}")]
    Capacity { dim: usize, cap: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-Hermitian Hamiltonian: max |H - H^dagger| = {0:e}")]
    NonHermitian(f64),

    #[error("bath region holds no spins")]
    EmptyBath,

    #[error("padding exhausted: subgroup {subgroup} needs {needed} more spins")]
    PaddingExhausted { subgroup: u8, needed: usize },

    #[error("{count} points are not divisible by the partition size {k}")]
    NotDivisible { count: usize, k: usize },

    #[error("Trotter step too large: halving dt changed Mx by {0:e}")]
    TrotterStepTooLarge(f64),

    #[error("undefined logarithm: Mx = {mx} at t = {t} us")]
    UndefinedLog { t: f64, mx: f64 },

    #[error("insufficient data: {0} usable points, at least 4 required")]
    InsufficientData(usize),

    #[error("realization {index} (seed {seed}) failed: {source}")]
    Realization {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
