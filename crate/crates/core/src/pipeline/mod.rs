//! Dataset generation, training and scanning commands with their file formats.

pub mod commands;
pub mod dataset;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use commands::*;
pub use dataset::*;

use crate::gan::GanError;
use crate::neuralnet::NnError;
use crate::solver::SolverError;
use crate::spectra::SpectrumError;

/// Environment variable naming the directory relative data paths resolve against.
pub const DATA_DIR_ENV: &str = "ESGAN_DATA_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("incompatible inputs: {0}")]
    Compatibility(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error(transparent)]
    Training(#[from] GanError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.to_path_buf(), source }
    }

    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Solver(_) => EXIT_SOLVER,
            PipelineError::Training(GanError::Divergence { .. }) => EXIT_NOT_CONVERGED,
            PipelineError::Training(GanError::Nn(NnError::Divergence(_))) => EXIT_NOT_CONVERGED,
            _ => EXIT_CONFIG,
        }
    }
}

impl From<SolverError> for PipelineError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Config(m) => PipelineError::Config(m),
            other => PipelineError::Solver(other.to_string()),
        }
    }
}

impl From<NnError> for PipelineError {
    fn from(e: NnError) -> Self {
        PipelineError::Training(GanError::Nn(e))
    }
}

/// Resolves a relative path against `$ESGAN_DATA_DIR` when that is set.
pub fn resolve_data_path(p: &Path) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if p.is_relative() && !dir.is_empty() => Path::new(&dir).join(p),
        _ => p.to_path_buf(),
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    std::fs::write(&tmp, contents).map_err(|e| PipelineError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}
