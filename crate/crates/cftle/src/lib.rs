//! File formats, configuration and command implementations for the
//! `cftle` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod fieldfile;
pub mod io;
pub mod manifest;
pub mod policyfile;
pub mod render;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use exec::RayonExecutor;
