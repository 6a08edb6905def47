// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid frame: {0} bytes is below the 64-byte Ethernet minimum")]
    InvalidFrame(usize),

    #[error("invalid task sequence: {0}")]
    InvalidSequence(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invariant violated in `{block}` at cycle {cycle}: {detail}")]
    Invariant {
        block: String,
        cycle: u64,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {msg} (byte offset {offset})", path.display())]
    Pcap {
        path: PathBuf,
        offset: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
