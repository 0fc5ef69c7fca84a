use thiserror::Error;
use vsl_core::error::LogError;
use vsl_core::{ConfigError, PolicyError, SimError};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("policy checksum {found} does not match expected {expected}")]
    PolicyMismatch { expected: String, found: String },
    #[error("log corridor digest {found} does not match {expected}")]
    CorridorMismatch { expected: String, found: String },
    #[error("journal entry on line {line}: {reason}")]
    Journal { line: usize, reason: String },
    #[error("resumed run diverged from the log at tick {tick}: {what}")]
    Diverged { tick: u64, what: String },
    #[error("feed exhausted")]
    FeedExhausted,
    #[error("environment variable {name}: {reason}")]
    Env { name: &'static str, reason: String },
}
