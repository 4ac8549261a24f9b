//! Process-level error split. Usage problems (bad flags or config values)
//! exit with code 2; runtime failures (I/O, training, mismatched inputs)
//! exit with code 1.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// The invocation itself is wrong.
    Usage(String),
    /// The invocation was fine but the work failed.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Runtime(msg) => f.write_str(msg),
        }
    }
}

/// Flatten an error and its source chain into one line.
fn chain(e: &dyn std::error::Error) -> String {
    let mut out = e.to_string();
    let mut src = e.source();
    while let Some(inner) = src {
        out.push_str(": ");
        out.push_str(&inner.to_string());
        src = inner.source();
    }
    out
}

macro_rules! runtime_from {
    ($($ty:ty),* $(,)?) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Runtime(chain(&e))
            }
        }
    )*};
}

runtime_from!(
    std::io::Error,
    fredformer::checkpoint::CheckpointError,
    fredformer::data::DataError,
    fredformer::model::ModelError,
    fredformer::spectral::SpectralError,
    fredformer::synthgen::SynthError,
    fredformer::train::TrainError,
    serde_json::Error,
);
