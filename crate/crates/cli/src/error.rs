use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("missing referenced file {0}")]
    MissingRef(PathBuf),
    #[error("waveform band {band_hz:.3e} Hz exceeds the usable {limit_hz:.3e} Hz at this rate")]
    BandExceeded { band_hz: f64, limit_hz: f64 },
    #[error(transparent)]
    Core(#[from] rfemu_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn schema(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Schema { path: path.into(), message: message.into() }
}

impl CliError {
    /// Process exit code: configuration and input problems are 2,
    /// acceptance failures are signalled separately as 1.
    pub fn exit_code(&self) -> i32 {
        2
    }
}
