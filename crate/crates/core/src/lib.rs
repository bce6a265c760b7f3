pub mod cache;
pub mod classify;
pub mod cli;
pub mod error;
pub mod evset;
pub mod experiment;
pub mod features;
pub mod profiler;

pub use error::{Error, Result};
