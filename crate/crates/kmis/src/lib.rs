//! File formats, the multi-trial experiment harness and the `kmis` CLI on
//! top of `kmis-core`.

pub mod config;
pub mod error;
pub mod harness;
pub mod io;

pub use error::{Error, Result};
