//! Error types shared across the crate.

use thiserror::Error;

/// Configuration problems, all reported before any run starts.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),
    #[error("unknown profile `{0}` (expected `desk` or `paper`)")]
    UnknownProfile(String),
    #[error("unknown override key `{0}`")]
    UnknownOverride(String),
    #[error("bad value for override `{0}`: `{1}`")]
    BadOverrideValue(String, String),
    #[error("population size must be at least 2, got {0}")]
    PopulationTooSmall(u64),
    #[error("at least one seed is required")]
    NoSeeds,
    #[error("bad fault descriptor `{0}`")]
    BadFault(String),
    #[error("experiment config: {0}")]
    BadSpec(String),
}

/// A transition failed. Only the exact-counting stages can hit this, and only
/// outside the supported population range.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum StepError {
    #[error("token count overflowed 128 bits")]
    LoadOverflow,
}

/// A run aborted instead of producing metrics.
#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{source} at interaction {t}")]
    Step { t: u64, source: StepError },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
