//! Moment-based entanglement detection for small bipartite systems.
//!
//! The crate covers the full pipeline: state-family constructors and samplers
//! (`qstate`), dense spectral primitives (`spectral`), partial-transpose and
//! realignment moment calculus with Newton-Girard spectrum reconstruction
//! (`moments`), exact multi-copy operator oracles with shot sampling
//! (`multicopy`), feature assembly (`features`), from-scratch classifiers and
//! the zero-false-positive protocol (`ml`), separability certification
//! (`certify`), and noise/calibration models (`noisecal`).
//!
//! Conventions fixed project-wide: composite basis index `(a, b) -> a·d_b + b`
//! (subsystem A major), natural logarithms in entropies, and all randomness
//! derived from a single root seed through [`seeds::SeedTree`].
//!
//! Contract violations (non-Hermitian input to an eigensolver, dimension
//! mismatches) panic; recoverable conditions (bad user parameters, data that
//! fails validation, ill-posed reconstructions) return [`QmError`].

pub mod cmat;
pub mod roots;
pub mod seeds;
pub mod spectral;

pub mod qstate;

pub mod moments;

pub mod multicopy;

pub mod features;

pub mod ml;

pub mod certify;

pub mod noisecal;

/// Recoverable errors surfaced across the crate.
#[derive(Debug, thiserror::Error)]
pub enum QmError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("state validation failed: {0}")]
    Validation(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("inconsistent moments: reconstructed power-sum residual {residual:.3e} exceeds 1e-6")]
    InconsistentMoments { residual: f64 },

    #[error("identifiability error: {0}")]
    Identifiability(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, QmError>;
