use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("corridor has no sensors")]
    NoSensors,
    #[error("corridor has no gantries")]
    NoGantries,
    #[error("gantry index {index} out of range 1..={count}")]
    GantryIndex { index: usize, count: usize },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("failed to parse configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("failed to serialize configuration: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("non-physical density {value} in cell {cell}")]
    Fault { cell: usize, value: f64 },
    #[error("vsl profile has {got} entries, corridor has {expected} gantries")]
    ProfileLength { expected: usize, got: usize },
    #[error("sub-step {dt}s violates the CFL bound {bound}s")]
    Cfl { dt: f64, bound: f64 },
    #[error("sensor readings requested at t={0}s, not a multiple of the sampling period")]
    Misaligned(f64),
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("every action is masked")]
    AllMasked,
    #[error("bad policy file: {0}")]
    Format(String),
    #[error("policy checksum mismatch")]
    Checksum,
    #[error("expected {expected} sensor windows, got {got}")]
    WindowCount { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss, update skipped")]
    NonFinite,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("log truncated after line {line}: last tick is incomplete")]
    Truncated { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("departure at t={t}s, x={x}mi lies outside the speed field")]
    OutsideField { t: f64, x: f64 },
    #[error("decision log covers {log_start}..{log_end}s but field covers {field_start}..{field_end}s")]
    Misaligned { log_start: f64, log_end: f64, field_start: f64, field_end: f64 },
    #[error("bad speed field: {0}")]
    Field(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}
