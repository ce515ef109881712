use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(&'static str),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no valid subject at center frame {0}")]
    EmptyCenterFrame(usize),
    #[error("sample of {frames} frames x {subjects} subjects exceeds {max_frames}x{max_subjects}")]
    OversizeSample {
        frames: usize,
        subjects: usize,
        max_frames: usize,
        max_subjects: usize,
    },
    #[error("joint {joint} projects with non-positive depth {depth}")]
    BehindCamera { joint: usize, depth: f64 },
    #[error("group size {0} outside [2, 6]")]
    InvalidN(usize),
    #[error("need at least {needed} single-person motions, have {available}")]
    NotEnoughSingles { needed: usize, available: usize },
    #[error("retrieval pool must hold 32 rows, got {0}")]
    PoolSizeError(usize),
    #[error("insufficient samples: need {needed}, have {available}")]
    InsufficientSamples { needed: usize, available: usize },
    #[error("guidance scales s_p={pose} + s_m={motion} exceed 1")]
    ScaleViolation { pose: f64, motion: f64 },
    #[error("mix source {0} has no samples")]
    EmptySource(&'static str),
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(&'static str),
}
