use std::path::Path;

use thermocloud::calibration::{CalibrationError, CornerCsvError, DocumentError};
use thermocloud::fusion::{FusionError, ImageError};
use thermocloud::pipeline::PipelineError;
use thermocloud::scale::ScaleError;
use thermocloud::synth::SynthError;
use thiserror::Error;

/// Process exit statuses.
pub mod exit {
    pub const USAGE: i32 = 1;
    pub const IO: i32 = 2;
    pub const PARSE: i32 = 3;
    pub const GEOMETRY: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Geometry(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Io { .. } => exit::IO,
            CliError::Parse { .. } => exit::PARSE,
            CliError::Geometry(_) => exit::GEOMETRY,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn parse(path: &Path, message: impl ToString) -> Self {
        CliError::Parse {
            path: path.display().to_string(),
            message: message.to_string(),
        }
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    let bytes = read_file(path)?;
    String::from_utf8(bytes).map_err(|_| CliError::parse(path, "not valid UTF-8"))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

impl From<ScaleError> for CliError {
    fn from(e: ScaleError) -> Self {
        match e {
            ScaleError::InvalidPattern(_) | ScaleError::InvalidBaseline(_) => CliError::Usage(e.to_string()),
            _ => CliError::Geometry(e.to_string()),
        }
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::InvalidBoard(_) => CliError::Usage(e.to_string()),
            _ => CliError::Geometry(e.to_string()),
        }
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        CliError::Geometry(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Scale(e) => e.into(),
            PipelineError::Fusion(e) => e.into(),
            PipelineError::NoThermalFrames => CliError::Geometry(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io { path, source } => CliError::Io { path, source },
            SynthError::InvalidSpec(_) => CliError::Usage(e.to_string()),
            SynthError::SamplingFailed(_) => CliError::Geometry(e.to_string()),
        }
    }
}

pub fn image_error(path: &Path, e: ImageError) -> CliError {
    match e {
        ImageError::Io { path, source } => CliError::Io { path, source },
        other => CliError::parse(path, other),
    }
}

pub fn corner_error(path: &Path, e: CornerCsvError) -> CliError {
    CliError::parse(path, e)
}

pub fn document_error(path: &Path, e: DocumentError) -> CliError {
    CliError::parse(path, e)
}
