//! Command implementations behind the `zeno` binary, plus the config and
//! trajectory file formats they read and write.

pub mod commands;
pub mod config;
pub mod error;
pub mod trajfile;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use trajfile::TrajectoryFile;
