//! Command-line surface for `mixed-em-core`: simulation, fitting, oracle
//! validation and matrix inspection, with CSV input and JSON reports.

pub mod commands;
pub mod csv_io;
pub mod error;
pub mod num;
pub mod report;

pub use commands::{run, Cli};
pub use error::{exit, CliError};
