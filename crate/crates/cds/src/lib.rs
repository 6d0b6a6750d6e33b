//! File formats, configuration, the HTTP model client and experiment drivers
//! around `cds-core`. The `cds` binary is a thin layer over this crate.

#![allow(clippy::result_large_err, clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod remote;

pub use error::{CdsError, CdsResult};
