//! Config-driven runner for the coupling experiments: `solve`, `compare`, `converge` and `bifurcate`.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;

pub use config::{load, parse, LoadedConfig, Mode};
pub use error::{ConfigError, RunError};
pub use runner::RunOptions;
