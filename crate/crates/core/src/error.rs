//! Error types shared by all modules.

use thiserror::Error;

/// Library-wide error type.
///
/// Variants split into two families so a frontend can map them to distinct
/// exit codes: configuration problems (`InvalidParam`, `ConfigParse`,
/// `UnknownPreset`) and numerical/resolution failures (the rest).
#[derive(Debug, Error)]
pub enum Error {
    /// A physical or solver parameter violates its domain.
    #[error("invalid {field}: {message}")]
    InvalidParam {
        field: &'static str,
        message: String,
    },

    /// A configuration document failed to parse.
    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    /// Preset name not in the catalog.
    #[error("unknown preset `{name}`; available: {available}")]
    UnknownPreset { name: String, available: String },

    /// Two bands are closer than the first-order theory tolerates.
    #[error("bands {band_a} and {band_b} nearly degenerate at k={k:.6}: |gap| = {gap:.3e} < {tol:.0e}")]
    Degeneracy {
        band_a: usize,
        band_b: usize,
        k: f64,
        gap: f64,
        tol: f64,
    },

    /// A grid or path is too coarse for the requested accuracy.
    #[error("resolution: {0}")]
    Resolution(String),

    /// A numerical guard tripped (NaN, failed convergence gate, ...).
    #[error("numerical: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidParam { .. } | Error::ConfigParse { .. } | Error::UnknownPreset { .. }
        )
    }
}
