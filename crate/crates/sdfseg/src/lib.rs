//! File formats, run configuration and the `sdfseg` command line on top of
//! [`sdfseg_core`].

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;

pub use config::RunConfig;
pub use error::{CliError, Result};
