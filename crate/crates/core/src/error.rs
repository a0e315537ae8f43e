use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid sensor group {group}: {reason}")]
    InvalidGroup { group: usize, reason: String },
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("invalid fusion rule: {0}")]
    InvalidRule(String),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(
        "{censored} of {trials} trials hit the run cap of {run_cap} steps; raise run_cap"
    )]
    ExcessiveCensoring { censored: u64, trials: u64, run_cap: u64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
