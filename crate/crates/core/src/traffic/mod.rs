// SPDX-License-Identifier: Apache-2.0

//! Traffic sources, the injector and sink blocks, and run reports.

mod generator;
mod report;
mod sink;
mod trace;

pub use generator::{
    mean_flits, mean_gap, GeneratorConfig, SequenceMode, SyntheticSource, FRAME_SIZES,
};
pub use report::{measure, LatencyStats, Measurement, RunReport, Window};
pub use sink::{Arrival, InjectRecord, Injector, Sink};
pub use trace::{
    ns_to_cycles, parse_pcap, read_pcap, write_pcap, CapturedPacket, SampleTrace, TraceConfig,
    TraceSequences, TraceSource,
};

use crate::kernel::Cycle;
use crate::model::Packet;

/// Supplies packets to an [`Injector`].
pub trait PacketSource: Send {
    /// Next packet and the earliest cycle its first flit may leave. The
    /// link is free from `free_at` on.
    fn next_packet(&mut self, free_at: Cycle) -> Option<(Cycle, Packet)>;
}

/// A fixed list of packets, each released no earlier than its cycle.
pub struct ListSource {
    packets: std::collections::VecDeque<(Cycle, Packet)>,
}

impl ListSource {
    pub fn new(packets: Vec<(Cycle, Packet)>) -> Self {
        ListSource {
            packets: packets.into(),
        }
    }
}

impl PacketSource for ListSource {
    fn next_packet(&mut self, free_at: Cycle) -> Option<(Cycle, Packet)> {
        self.packets.pop_front().map(|(at, p)| (at.max(free_at), p))
    }
}
