//! File formats, the external scorer protocol, batch run recipes, the HTTP
//! search service and the command line, built on `stagerank-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod scorer;
pub mod service;

pub use error::{Error, Result};
