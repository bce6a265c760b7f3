use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("address {address:#x} outside modeled physical range ({limit:#x} bytes)")]
    Range { address: u64, limit: u64 },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("virtual address {0:#x} is not mapped")]
    Unmapped(u64),

    /// The pool walk never observed contention. `max_jump` is the largest
    /// `t_T - t_old` seen, useful for re-tuning `tau_jump`.
    #[error("eviction-set search failed: no jump exceeded tau_jump={tau_jump} ns (max observed jump {max_jump} ns)")]
    SearchFailed { tau_jump: f64, max_jump: f64 },

    #[error("physical-mode capture requires oracle access")]
    Privilege,

    #[error("degenerate series: every sample is an outlier")]
    DegenerateSeries,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("cannot split dataset: {0}")]
    Split(String),

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Divergence { epoch: usize },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
