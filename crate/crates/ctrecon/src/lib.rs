//! File formats, experiment configuration and the command-line driver for
//! `ctrecon-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod format;
pub mod manifest;
pub mod model;
pub mod png;
pub mod report;
pub mod union;

pub use error::{CliError, Result};
