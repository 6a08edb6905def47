// SPDX-License-Identifier: Apache-2.0

//! Ingress parser: classifies each packet, attaches its metadata to the
//! first flit and forwards the stream after a fixed pipeline delay.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::kernel::{Block, Cycle, Exchange, Flit, PortId, Signals};
use crate::model::{FlowTable, Headers, Metadata, Packet, TaskSequence};

/// Default parser pipeline depth in cycles.
pub const PARSER_LATENCY: u64 = 4;

/// How the flow type is derived from a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Classifier {
    /// Flow type assigned by the traffic generator.
    Synthetic,
    /// `dst_port % flows`.
    DstPortModulo { flows: u32 },
}

/// Result of classification. `None` means the packet is not IPv4 and
/// bypasses the engines.
pub fn classify(headers: &Headers, flow_hint: Option<u32>, classifier: Classifier) -> Option<u32> {
    match classifier {
        Classifier::Synthetic => flow_hint,
        Classifier::DstPortModulo { flows } => headers
            .ipv4
            .then(|| u32::from(headers.dst_port) % flows.max(1)),
    }
}

/// Builds the sideband record. Unknown flows fall back to the bypass
/// sequence; the second value reports that.
pub fn build_metadata(
    pkt: &Packet,
    table: &FlowTable,
    classifier: Classifier,
    now: Cycle,
) -> (Metadata, bool) {
    let flow = classify(&pkt.headers, pkt.flow_hint, classifier);
    let (flow_type, seq, known) = match flow.and_then(|f| table.lookup(f).map(|s| (f, s))) {
        Some((f, s)) => (f, s.clone(), true),
        None => (flow.unwrap_or(u32::MAX), TaskSequence::bypass(), false),
    };
    let meta = Metadata::new(
        pkt.frame_bytes,
        flow_type,
        pkt.headers.priority_class(),
        seq,
        now,
    );
    (meta, known)
}

pub struct Parser {
    name: String,
    input: PortId,
    output: PortId,
    latency: u64,
    classifier: Classifier,
    table: FlowTable,
    pipe: VecDeque<(Cycle, Flit)>,
    parsed: u64,
    unclassified: u64,
}

impl Parser {
    pub fn new(
        name: &str,
        input: PortId,
        output: PortId,
        latency: u64,
        classifier: Classifier,
        table: FlowTable,
    ) -> Self {
        Parser {
            name: name.to_string(),
            input,
            output,
            latency,
            classifier,
            table,
            pipe: VecDeque::new(),
            parsed: 0,
            unclassified: 0,
        }
    }

    /// Replaces the flow table. Takes effect for packets parsed from the
    /// next cycle on.
    pub fn set_flow_table(&mut self, table: FlowTable) {
        self.table = table;
    }

    pub fn flow_table(&self) -> &FlowTable {
        &self.table
    }

    pub fn parsed(&self) -> u64 {
        self.parsed
    }

    /// Packets that fell back to the bypass sequence.
    pub fn unclassified(&self) -> u64 {
        self.unclassified
    }

    fn capacity(&self) -> usize {
        self.latency as usize + 1
    }
}

impl Block for Parser {
    fn name(&self) -> &str {
        &self.name
    }

    fn inputs(&self) -> Vec<PortId> {
        vec![self.input]
    }

    fn outputs(&self) -> Vec<PortId> {
        vec![self.output]
    }

    fn drive(&self, now: Cycle, sig: &mut Signals<'_>) {
        sig.set_ready(self.input, self.pipe.len() < self.capacity());
        if let Some((at, flit)) = self.pipe.front() {
            if *at <= now {
                sig.offer(self.output, flit.tag());
            }
        }
    }

    fn emit(&mut self, _now: Cycle, _port: PortId) -> Flit {
        self.pipe.pop_front().expect("offered flit").1
    }

    fn commit(&mut self, now: Cycle, io: &mut Exchange<'_>) {
        let Some(mut flit) = io.take(self.input) else {
            return;
        };
        if let Some(pkt) = flit.packet_mut() {
            let (meta, known) = build_metadata(pkt, &self.table, self.classifier, now);
            pkt.meta = Some(meta);
            pkt.parser_entry_cycle = Some(now);
            self.parsed += 1;
            self.unclassified += u64::from(!known);
        }
        self.pipe.push_back((now + self.latency, flit));
    }
}
