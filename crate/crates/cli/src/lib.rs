//! Configuration-driven front end for the `coupled-diffusion` library.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{run_simulate, run_spectrum, run_sweep, run_verify, Artifacts, CheckRow};
pub use config::SimConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error in `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("runtime error during {stage}: {msg}")]
    Runtime { stage: String, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit code: 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Runtime { .. } | CliError::Io(_) => 3,
        }
    }
}
