use thiserror::Error;

/// Errors produced by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spin quantum number {0}: 2s must be a non-negative integer")]
    InvalidSpin(f64),

    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("slot {slot} out of range for product space with {nslots} factors")]
    SlotOutOfRange { slot: usize, nslots: usize },

    #[error("operator dimension {got} does not match expected dimension {expected}")]
    DimensionMismatch { got: usize, expected: usize },

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("lattice matrix is singular")]
    SingularLattice,

    #[error("unknown element '{0}'")]
    UnknownElement(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("zero separation between spins")]
    SingularGeometry,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("cluster {0:?} not present in cluster set")]
    ClusterNotFound(Vec<u32>),

    #[error("bath spin {0} has no hyperfine tensor")]
    MissingHyperfine(usize),

    #[error(
        "central-spin levels {alpha} and {beta} are separated by only {gap:.3e} rad/ms, \
         below the perturbation threshold {threshold:.3e}; use the generalized formulation"
    )]
    DegenerateLevels {
        alpha: usize,
        beta: usize,
        gap: f64,
        threshold: f64,
    },

    #[error("pulse {index} has angle {angle} rad; the conventional formulation requires pi flips")]
    NonPiPulse { index: usize, angle: f64 },

    #[error("pulse times must be strictly increasing within (0, 1), got {0}")]
    InvalidPulseTiming(f64),

    #[error("Hilbert-space dimension {dim} exceeds the guard of {guard}")]
    DimensionGuard { dim: usize, guard: usize },

    #[error("qubit level index {level} out of range for multiplicity {multiplicity}")]
    LevelOutOfRange { level: usize, multiplicity: usize },

    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
