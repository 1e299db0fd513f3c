//! Library side of the `sst` command-line tool: run configuration,
//! recording discovery, evaluation and one function per subcommand.

pub mod commands;
pub mod config;
pub mod data;
mod error;
pub mod eval;

pub use commands::{cmd_baseline, cmd_crossval, cmd_eval, cmd_infer, cmd_preprocess, cmd_synth, cmd_train};
pub use config::{RunConfig, SstSettings};
pub use error::CliError;
