use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("beta-out-of-range: beta = {0} (need 0 < beta <= 1)")]
    BetaOutOfRange(f64),
    #[error("gamma-out-of-range: gamma = {0} (need gamma > 0)")]
    GammaOutOfRange(f64),
    #[error("drive-out-of-range: drive photon rate = {0} (need >= 0)")]
    DriveOutOfRange(f64),
    #[error("non-finite parameter `{0}`")]
    NonFinite(&'static str),
    #[error("invalid tau grid: {0}")]
    InvalidGrid(String),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("opaque-atom: resonant transmission of a single atom vanishes or flips sign at beta = {0}")]
    OpaqueAtom(f64),
    #[error("vanishing-transmission: T = {transmission:e} is below the floor {floor:e}")]
    VanishingTransmission { transmission: f64, floor: f64 },
    #[error("not-bracketed: no g2(0) minimum below {threshold} for N <= {n_max}")]
    NotBracketed { threshold: f64, n_max: usize },
    #[error("oracle-too-large: {requested} atoms requested, cap is {cap}")]
    OracleTooLarge { requested: usize, cap: usize },
    #[error("not-converged: {0}")]
    NotConverged(String),
    #[error("empty-distribution: {0}")]
    EmptyDistribution(String),
    #[error("insufficient-tail: {found} tail counts, need at least {required}")]
    InsufficientTail { found: u64, required: u64 },
    #[error("empty-window: no coincidences inside the fit window of {window_ns} ns")]
    EmptyWindow { window_ns: f64 },
    #[error("fit-failed: {0}")]
    FitFailed(String),
    #[error("unstable-fit: {failed} of {total} bootstrap refits failed")]
    UnstableFit { failed: usize, total: usize },
    #[error("unsorted-stream: timestamp at record {index} decreases")]
    UnsortedStream { index: usize },
    #[error("uninformative: {0}")]
    Uninformative(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status: 2 configuration, 3 numerical, 4 data.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            BetaOutOfRange(_)
            | GammaOutOfRange(_)
            | DriveOutOfRange(_)
            | InvalidGrid(_)
            | OracleTooLarge { .. }
            | Config(_) => 2,
            NonFinite(_)
            | OpaqueAtom(_)
            | VanishingTransmission { .. }
            | NotBracketed { .. }
            | NotConverged(_)
            | FitFailed(_)
            | UnstableFit { .. } => 3,
            InvalidCurve(_)
            | EmptyDistribution(_)
            | InsufficientTail { .. }
            | EmptyWindow { .. }
            | UnsortedStream { .. }
            | Uninformative(_)
            | InvalidData(_)
            | Io(_)
            | Csv(_)
            | Json(_) => 4,
        }
    }
}
