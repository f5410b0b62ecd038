//! Pipeline commands behind the `hand2robot` binary.
//!
//! Every command takes a loaded [`config::LoadedConfig`] and [`RunOptions`];
//! the binary only parses flags, sets up logging and the worker pool, and
//! maps [`CliError`] to an exit code.

pub mod cmd;
pub mod config;
pub mod svg;

use hand2robot::Execution;
use thiserror::Error;

pub use cmd::augment::cmd_augment;
pub use cmd::demo::write_demo;
pub use cmd::inspect::cmd_inspect;
pub use cmd::mix::cmd_mix;
pub use cmd::retarget::cmd_retarget;
pub use cmd::validate::cmd_validate;
pub use config::{LoadedConfig, PipelineConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or missing configuration, including referenced paths that do
    /// not exist.
    #[error("config error: {0}")]
    Config(String),
    /// An input file exists but cannot be used.
    #[error("input error: {0}")]
    Input(String),
    /// The run finished but a quality gate failed.
    #[error("validation failed: {0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Validation(_) => EXIT_VALIDATION,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub exec: Execution,
    /// Validate and compute everything, write nothing.
    pub dry_run: bool,
}
