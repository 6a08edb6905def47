// SPDX-License-Identifier: Apache-2.0

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::PacketSource;
use crate::kernel::{flit_count, packetize, Block, Cycle, Exchange, Flit, PortId, Signals};
use crate::model::{Packet, TaskId};

/// One packet as it left the injector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectRecord {
    pub id: u64,
    pub cycle: Cycle,
    pub frame_bytes: u32,
    pub flow: Option<u32>,
}

/// Streams packets from a [`PacketSource`] onto a port, one flit per cycle.
pub struct Injector {
    name: String,
    output: PortId,
    source: Box<dyn PacketSource>,
    release: Cycle,
    current: VecDeque<Flit>,
    log: Vec<InjectRecord>,
    flits: u64,
    end: Option<Cycle>,
}

impl Injector {
    pub fn new(name: &str, output: PortId, source: Box<dyn PacketSource>) -> Self {
        let mut inj = Injector {
            name: name.to_string(),
            output,
            source,
            release: Cycle::ZERO,
            current: VecDeque::new(),
            log: Vec::new(),
            flits: 0,
            end: None,
        };
        inj.load(Cycle::ZERO);
        inj
    }

    fn load(&mut self, free_at: Cycle) {
        match self.source.next_packet(free_at) {
            Some((at, pkt)) => {
                self.release = at;
                self.current = packetize(pkt).expect("sources produce valid frames");
            }
            None => self.end = Some(free_at),
        }
    }

    pub fn log(&self) -> &[InjectRecord] {
        &self.log
    }

    pub fn injected(&self) -> u64 {
        self.log.len() as u64
    }

    pub fn flits(&self) -> u64 {
        self.flits
    }

    /// First cycle after the last injected flit, once the source is empty.
    pub fn end(&self) -> Option<Cycle> {
        self.end
    }

    pub fn is_done(&self) -> bool {
        self.end.is_some()
    }
}

impl Block for Injector {
    fn name(&self) -> &str {
        &self.name
    }

    fn inputs(&self) -> Vec<PortId> {
        Vec::new()
    }

    fn outputs(&self) -> Vec<PortId> {
        vec![self.output]
    }

    fn drive(&self, now: Cycle, sig: &mut Signals<'_>) {
        if let Some(f) = self.current.front() {
            if self.release <= now {
                sig.offer(self.output, f.tag());
            }
        }
    }

    fn emit(&mut self, now: Cycle, _port: PortId) -> Flit {
        let mut flit = self.current.pop_front().expect("offered flit");
        if let Some(pkt) = flit.packet_mut() {
            pkt.inject_cycle = Some(now);
            self.log.push(InjectRecord {
                id: pkt.id,
                cycle: now,
                frame_bytes: pkt.frame_bytes,
                flow: pkt.flow_hint,
            });
        }
        self.flits += 1;
        if flit.last {
            self.load(now + 1);
        }
        flit
    }

    fn commit(&mut self, _now: Cycle, _io: &mut Exchange<'_>) {}
}

/// A delivered packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub id: u64,
    pub frame_bytes: u32,
    pub flow_type: u32,
    pub inject: Cycle,
    pub parser_entry: Cycle,
    /// Cycle of the last flit.
    pub arrival: Cycle,
    pub egress_port: Option<u8>,
}

impl Arrival {
    pub fn latency(&self) -> u64 {
        self.arrival - self.parser_entry
    }

    pub fn flits(&self) -> u64 {
        flit_count(self.frame_bytes as usize).unwrap_or(0) as u64
    }
}

/// Always-ready traffic sink that timestamps complete packets.
pub struct Sink {
    name: String,
    input: PortId,
    open: Option<(Box<Packet>, usize)>,
    arrivals: Vec<Arrival>,
    completed: u64,
    errors: Vec<String>,
}

impl Sink {
    pub fn new(name: &str, input: PortId) -> Self {
        Sink {
            name: name.to_string(),
            input,
            open: None,
            arrivals: Vec::new(),
            completed: 0,
            errors: Vec::new(),
        }
    }

    pub fn arrivals(&self) -> &[Arrival] {
        &self.arrivals
    }

    fn deliver(&mut self, pkt: &Packet, flits: usize, now: Cycle) {
        let expect = flit_count(pkt.frame_bytes as usize).unwrap_or(0);
        if flits != expect {
            self.errors.push(format!(
                "packet {} arrived with {flits} flits, expected {expect}",
                pkt.id
            ));
        }
        let Some(meta) = pkt.meta.as_ref() else {
            self.errors
                .push(format!("packet {} arrived unparsed", pkt.id));
            return;
        };
        if meta.current_task() != TaskId::Egress {
            self.errors.push(format!(
                "packet {} left before finishing its sequence ({})",
                pkt.id,
                meta.current_task()
            ));
        }
        let entry = pkt.parser_entry_cycle.unwrap_or(meta.timestamp);
        let inject = pkt.inject_cycle.unwrap_or(entry);
        if !(inject <= entry && entry <= now) {
            self.errors
                .push(format!("packet {} has inconsistent timestamps", pkt.id));
        }
        self.arrivals.push(Arrival {
            id: pkt.id,
            frame_bytes: pkt.frame_bytes,
            flow_type: meta.flow_type,
            inject,
            parser_entry: entry,
            arrival: now,
            egress_port: pkt.egress_port,
        });
    }
}

impl Block for Sink {
    fn name(&self) -> &str {
        &self.name
    }

    fn inputs(&self) -> Vec<PortId> {
        vec![self.input]
    }

    fn outputs(&self) -> Vec<PortId> {
        Vec::new()
    }

    fn drive(&self, _now: Cycle, sig: &mut Signals<'_>) {
        sig.set_ready(self.input, true);
    }

    fn emit(&mut self, _now: Cycle, _port: PortId) -> Flit {
        unreachable!("sink has no outputs")
    }

    fn commit(&mut self, now: Cycle, io: &mut Exchange<'_>) {
        let Some(mut flit) = io.take(self.input) else {
            return;
        };
        if let Some(pkt) = flit.head.take() {
            self.open = Some((pkt, 0));
        }
        let Some((_, count)) = self.open.as_mut() else {
            self.errors
                .push(format!("flit of packet {} without head", flit.packet_id));
            return;
        };
        *count += 1;
        if flit.last {
            let (mut pkt, count) = self.open.take().expect("open packet");
            pkt.sink_arrival_cycle = Some(now);
            self.completed += 1;
            self.deliver(&pkt, count, now);
        }
    }

    fn check(&self) -> Result<(), String> {
        self.errors.first().map_or(Ok(()), |e| Err(e.clone()))
    }

    fn retired(&self) -> u64 {
        self.completed
    }
}
