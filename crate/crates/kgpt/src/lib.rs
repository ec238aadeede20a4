//! File formats, the thread-pool executor and the `kgpt` command line on
//! top of `kgpt-core`.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod exec;
pub mod io;
pub mod manifest;
pub mod metric_log;
pub mod vocab_file;

pub use error::CliError;
