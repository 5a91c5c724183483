use gpar_core::data::DataError;
use gpar_core::gpar::GparError;
use gpar_core::oracle::OracleError;
use gpar_core::synth::{MetricError, SynthError};

/// Failure of a command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Exit 2: bad flags, config or kernel files.
    #[error("{0}")]
    Config(String),
    /// Exit 3: unreadable or invalid data and model files.
    #[error("{0}")]
    Data(String),
    /// Exit 4: factorisation or optimisation failure, failed verification.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<GparError> for CliError {
    fn from(e: GparError) -> Self {
        let msg = e.to_string();
        match e {
            GparError::Data(_)
            | GparError::NotClosedDownwards(_)
            | GparError::Incompatible(_)
            | GparError::Corrupt(_)
            | GparError::Version { .. }
            | GparError::Io { .. } => CliError::Data(msg),
            GparError::SpecCount { .. }
            | GparError::Kernel { .. }
            | GparError::NoDecomposition { .. }
            | GparError::NoComponent { .. }
            | GparError::NoSamples => CliError::Config(msg),
            GparError::Layer { .. } => CliError::Numerical(msg),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

pub(crate) fn io_error(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}
