// SPDX-License-Identifier: Apache-2.0

//! Cycle-accurate model of a packet-processing architecture built around a
//! crosspoint-queued crossbar.
//!
//! A parser classifies incoming frames and attaches a task sequence as
//! sideband metadata. A 7x7 crossbar then carries every packet through the
//! processing engines in that order, and finally to the egress port. Every
//! crossbar input/output pair owns a byte-accounted FIFO. Each output port
//! runs its own local scheduler (round robin, longest queue first or first
//! come first served). Packets cross the fabric in virtual cut-through mode.
//!
//! The [`world`] module assembles the whole system; [`world::run`] executes
//! one experiment point and returns a [`traffic::RunReport`].

pub mod cioq;
pub mod config;
pub mod crossbar;
pub mod engines;
mod error;
pub mod kernel;
pub mod model;
pub mod parser;
pub mod sched;
pub mod traffic;
pub mod world;

pub use error::{Error, Result};
