// SPDX-License-Identifier: Apache-2.0

//! Synchronous, cycle-driven simulation kernel.
//!
//! Blocks communicate exclusively through [`StreamPort`]s, which follow the
//! valid/ready handshake of a streaming bus. One kernel step is one clock
//! cycle and runs in three phases:
//!
//! 1. **drive**: every block publishes `valid` (plus the tag of the flit it
//!    offers) on its outputs and `ready` on its inputs. Both are functions of
//!    registered state only; `drive` takes `&self`.
//! 2. **fire**: on every port with `valid && ready` the kernel moves the flit
//!    out of the sender ([`Block::emit`]) into the port's mailbox.
//! 3. **commit**: every block takes the flits delivered to its inputs and
//!    updates its registers.
//!
//! A block never sees another block's commit within the same cycle, so the
//! order in which blocks are visited cannot change any transfer.
//! [`Kernel::shuffle_order`] exists to test exactly that.

use std::any::Any;
use std::collections::VecDeque;
use std::fmt;
use std::ops::{Add, Sub};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Metadata, Packet};
use crate::{Error, Result};

/// Width of the datapath: one 512-bit word per cycle.
pub const FLIT_BYTES: usize = 64;

/// Smallest legal Ethernet frame.
pub const MIN_FRAME_BYTES: usize = 64;

/// Count of elapsed clock cycles.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Cycle(pub u64);

impl Cycle {
    pub const ZERO: Cycle = Cycle(0);

    pub fn get(self) -> u64 {
        self.0
    }

    pub fn to_micros(self, clock_hz: f64) -> f64 {
        cycles_to_us(self.0, clock_hz)
    }
}

impl Add<u64> for Cycle {
    type Output = Cycle;

    fn add(self, rhs: u64) -> Cycle {
        Cycle(self.0 + rhs)
    }
}

impl Sub for Cycle {
    type Output = u64;

    fn sub(self, rhs: Cycle) -> u64 {
        self.0 - rhs.0
    }
}

impl fmt::Display for Cycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Number of datapath words needed to carry a frame.
pub fn flit_count(frame_bytes: usize) -> Result<usize> {
    if frame_bytes < MIN_FRAME_BYTES {
        return Err(Error::InvalidFrame(frame_bytes));
    }
    Ok(frame_bytes.div_ceil(FLIT_BYTES))
}

/// Valid bytes in flit `index` of a frame. Only the last flit can be partial.
pub fn flit_payload(frame_bytes: usize, index: usize) -> usize {
    frame_bytes
        .saturating_sub(index * FLIT_BYTES)
        .min(FLIT_BYTES)
}

/// Converts a cycle count to microseconds at the given clock.
pub fn cycles_to_us(cycles: u64, clock_hz: f64) -> f64 {
    cycles as f64 * 1e6 / clock_hz
}

/// Identity of a flit as seen on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FlitTag {
    pub packet_id: u64,
    pub index: u16,
    pub last: bool,
}

/// One datapath word.
#[derive(Debug, Clone, PartialEq)]
pub struct Flit {
    pub packet_id: u64,
    pub index: u16,
    /// Valid bytes in this word (1..=64).
    pub bytes: u16,
    pub last: bool,
    /// Headers, sideband metadata and timestamps. First flit only.
    pub head: Option<Box<Packet>>,
}

impl Flit {
    pub fn tag(&self) -> FlitTag {
        FlitTag {
            packet_id: self.packet_id,
            index: self.index,
            last: self.last,
        }
    }

    pub fn is_first(&self) -> bool {
        self.index == 0
    }

    pub fn sideband(&self) -> Option<&Metadata> {
        self.head.as_ref().and_then(|p| p.meta.as_ref())
    }

    pub fn packet(&self) -> Option<&Packet> {
        self.head.as_deref()
    }

    pub fn packet_mut(&mut self) -> Option<&mut Packet> {
        self.head.as_deref_mut()
    }
}

/// Splits a packet into its flit stream. The packet itself rides on the
/// first flit.
pub fn packetize(packet: Packet) -> Result<VecDeque<Flit>> {
    let frame = packet.frame_bytes as usize;
    let count = flit_count(frame)?;
    let id = packet.id;
    let mut head = Some(Box::new(packet));
    Ok((0..count)
        .map(|index| Flit {
            packet_id: id,
            index: index as u16,
            bytes: flit_payload(frame, index) as u16,
            last: index + 1 == count,
            head: head.take(),
        })
        .collect())
}

pub type PortId = usize;
pub type BlockId = usize;

/// Handshake state of one point-to-point stream link.
#[derive(Debug, Clone, Default)]
pub struct StreamPort {
    /// Tag of the flit offered this cycle, if any.
    pub valid: Option<FlitTag>,
    pub ready: bool,
    /// Flit offered in the previous cycle that did not transfer.
    held: Option<FlitTag>,
    /// Last transferred flit of a packet whose tail has not crossed yet.
    open: Option<FlitTag>,
    pub transfers: u64,
}

impl StreamPort {
    pub fn fires(&self) -> bool {
        self.valid.is_some() && self.ready
    }
}

/// Write access to handshake signals during the drive phase.
pub struct Signals<'a> {
    ports: &'a mut [StreamPort],
    sender: &'a [Option<BlockId>],
    receiver: &'a [Option<BlockId>],
    current: BlockId,
}

impl Signals<'_> {
    pub fn offer(&mut self, port: PortId, tag: FlitTag) {
        debug_assert_eq!(
            self.sender[port],
            Some(self.current),
            "port {port} not owned"
        );
        self.ports[port].valid = Some(tag);
    }

    pub fn set_ready(&mut self, port: PortId, ready: bool) {
        debug_assert_eq!(
            self.receiver[port],
            Some(self.current),
            "port {port} not owned"
        );
        self.ports[port].ready = ready;
    }
}

/// Access to the cycle's transfers during the commit phase.
pub struct Exchange<'a> {
    mailbox: &'a mut [Option<Flit>],
    ports: &'a [StreamPort],
}

impl Exchange<'_> {
    /// Takes the flit delivered on `port` this cycle.
    pub fn take(&mut self, port: PortId) -> Option<Flit> {
        self.mailbox[port].take()
    }

    /// Whether `port` transferred a flit this cycle.
    pub fn fired(&self, port: PortId) -> bool {
        self.ports[port].fires()
    }
}

/// A clocked hardware block.
pub trait Block: Any {
    fn name(&self) -> &str;

    fn inputs(&self) -> Vec<PortId>;

    fn outputs(&self) -> Vec<PortId>;

    /// Publishes `valid` on outputs and `ready` on inputs from registered state.
    fn drive(&self, now: Cycle, sig: &mut Signals<'_>);

    /// Hands over the flit offered on `port`; called only when it fired.
    fn emit(&mut self, now: Cycle, port: PortId) -> Flit;

    /// Consumes this cycle's arrivals and advances internal registers.
    fn commit(&mut self, now: Cycle, io: &mut Exchange<'_>);

    /// Structural invariants, checked after every commit when enabled.
    fn check(&self) -> std::result::Result<(), String> {
        Ok(())
    }

    /// Packets this block has permanently removed from the system
    /// (delivered, dropped, filtered).
    fn retired(&self) -> u64 {
        0
    }
}

pub struct Kernel {
    now: Cycle,
    blocks: Vec<Box<dyn Block>>,
    outs: Vec<Vec<PortId>>,
    ports: Vec<StreamPort>,
    sender: Vec<Option<BlockId>>,
    receiver: Vec<Option<BlockId>>,
    mailbox: Vec<Option<Flit>>,
    order: Vec<BlockId>,
    shuffle: Option<ChaCha8Rng>,
    check_invariants: bool,
    sealed: bool,
}

impl Default for Kernel {
    fn default() -> Self {
        Self::new()
    }
}

impl Kernel {
    pub fn new() -> Self {
        Kernel {
            now: Cycle::ZERO,
            blocks: Vec::new(),
            outs: Vec::new(),
            ports: Vec::new(),
            sender: Vec::new(),
            receiver: Vec::new(),
            mailbox: Vec::new(),
            order: Vec::new(),
            shuffle: None,
            check_invariants: false,
            sealed: false,
        }
    }

    /// Allocates a new unconnected port.
    pub fn port(&mut self) -> PortId {
        self.ports.push(StreamPort::default());
        self.sender.push(None);
        self.receiver.push(None);
        self.mailbox.push(None);
        self.ports.len() - 1
    }

    pub fn ports(&mut self, n: usize) -> Vec<PortId> {
        (0..n).map(|_| self.port()).collect()
    }

    pub fn add<B: Block>(&mut self, block: B) -> Result<BlockId> {
        let id = self.blocks.len();
        let outs = block.outputs();
        for &p in &outs {
            let slot = self
                .sender
                .get_mut(p)
                .ok_or_else(|| Error::Config(format!("{}: unknown port {p}", block.name())))?;
            if slot.replace(id).is_some() {
                return Err(Error::Config(format!("port {p} has two senders")));
            }
        }
        for p in block.inputs() {
            let slot = self
                .receiver
                .get_mut(p)
                .ok_or_else(|| Error::Config(format!("{}: unknown port {p}", block.name())))?;
            if slot.replace(id).is_some() {
                return Err(Error::Config(format!("port {p} has two receivers")));
            }
        }
        self.blocks.push(Box::new(block));
        self.outs.push(outs);
        self.order.push(id);
        Ok(id)
    }

    pub fn now(&self) -> Cycle {
        self.now
    }

    pub fn set_invariant_checks(&mut self, on: bool) {
        self.check_invariants = on;
    }

    /// Visits blocks in a fresh random order every cycle.
    pub fn shuffle_order(&mut self, seed: u64) {
        self.shuffle = Some(ChaCha8Rng::seed_from_u64(seed));
    }

    pub fn get<B: Block>(&self, id: BlockId) -> Option<&B> {
        let any: &dyn Any = self.blocks.get(id)?.as_ref();
        any.downcast_ref()
    }

    pub fn get_mut<B: Block>(&mut self, id: BlockId) -> Option<&mut B> {
        let any: &mut dyn Any = self.blocks.get_mut(id)?.as_mut();
        any.downcast_mut()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &dyn Block> {
        self.blocks.iter().map(|b| b.as_ref())
    }

    pub fn port_state(&self, port: PortId) -> &StreamPort {
        &self.ports[port]
    }

    /// Sum of [`Block::retired`] over all blocks.
    pub fn retired(&self) -> u64 {
        self.blocks.iter().map(|b| b.retired()).sum()
    }

    fn seal(&mut self) -> Result<()> {
        for p in 0..self.ports.len() {
            if self.sender[p].is_none() || self.receiver[p].is_none() {
                return Err(Error::Config(format!("port {p} is not fully connected")));
            }
        }
        self.sealed = true;
        Ok(())
    }

    /// Advances the world by exactly one clock cycle.
    pub fn step(&mut self) -> Result<()> {
        if !self.sealed {
            self.seal()?;
        }
        let now = self.now;
        if let Some(rng) = self.shuffle.as_mut() {
            self.order.shuffle(rng);
        }

        for port in &mut self.ports {
            port.valid = None;
            port.ready = false;
        }
        for &b in &self.order {
            let mut sig = Signals {
                ports: &mut self.ports,
                sender: &self.sender,
                receiver: &self.receiver,
                current: b,
            };
            self.blocks[b].drive(now, &mut sig);
        }

        for (p, port) in self.ports.iter_mut().enumerate() {
            if let Some(held) = port.held {
                if port.valid != Some(held) {
                    return Err(Error::Contract(format!(
                        "cycle {now}: port {p} withdrew or changed a pending flit {held:?}"
                    )));
                }
            }
            if port.fires() {
                let tag = port.valid.expect("fires implies valid");
                let continues = match port.open {
                    Some(open) => tag.packet_id == open.packet_id && tag.index == open.index + 1,
                    None => tag.index == 0,
                };
                if !continues {
                    return Err(Error::Contract(format!(
                        "cycle {now}: port {p} interleaved packets ({:?} then {tag:?})",
                        port.open
                    )));
                }
                port.open = (!tag.last).then_some(tag);
                port.held = None;
                port.transfers += 1;
            } else {
                port.held = port.valid;
            }
        }

        for &b in &self.order {
            for &p in &self.outs[b] {
                if let Some(tag) = self.ports[p].valid.filter(|_| self.ports[p].ready) {
                    let flit = self.blocks[b].emit(now, p);
                    if flit.tag() != tag {
                        return Err(Error::Contract(format!(
                            "cycle {now}: port {p} offered {tag:?} but emitted {:?}",
                            flit.tag()
                        )));
                    }
                    self.mailbox[p] = Some(flit);
                }
            }
        }

        for &b in &self.order {
            let mut io = Exchange {
                mailbox: &mut self.mailbox,
                ports: &self.ports,
            };
            self.blocks[b].commit(now, &mut io);
        }
        if let Some(p) = self.mailbox.iter().position(Option::is_some) {
            return Err(Error::Contract(format!(
                "cycle {now}: flit on port {p} was not consumed by its receiver"
            )));
        }

        if self.check_invariants {
            for block in &self.blocks {
                block.check().map_err(|detail| Error::Invariant {
                    block: block.name().to_string(),
                    cycle: now.0,
                    detail,
                })?;
            }
        }
        self.now = now + 1;
        Ok(())
    }

    pub fn run_for(&mut self, cycles: u64) -> Result<()> {
        for _ in 0..cycles {
            self.step()?;
        }
        Ok(())
    }
}

/// Emits a fixed list of packets, each no earlier than its release cycle,
/// flits back to back.
pub struct ScriptedSource {
    name: String,
    output: PortId,
    pending: VecDeque<(Cycle, Packet)>,
    current: VecDeque<Flit>,
    released: bool,
    sent: u64,
}

impl ScriptedSource {
    pub fn new(name: &str, output: PortId, packets: Vec<(Cycle, Packet)>) -> Self {
        let mut src = ScriptedSource {
            name: name.to_string(),
            output,
            pending: packets.into(),
            current: VecDeque::new(),
            released: false,
            sent: 0,
        };
        src.load();
        src
    }

    fn load(&mut self) {
        if self.current.is_empty() {
            if let Some((_, pkt)) = self.pending.front() {
                self.current = packetize(pkt.clone()).expect("scripted packets are valid frames");
            }
        }
    }

    fn release_at(&self) -> Option<Cycle> {
        self.pending.front().map(|(c, _)| *c)
    }

    pub fn flits_sent(&self) -> u64 {
        self.sent
    }

    pub fn is_done(&self) -> bool {
        self.pending.is_empty()
    }
}

impl Block for ScriptedSource {
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
        let due = self.released || self.release_at().is_some_and(|c| c <= now);
        if let Some(flit) = self.current.front().filter(|_| due) {
            sig.offer(self.output, flit.tag());
        }
    }

    fn emit(&mut self, now: Cycle, _port: PortId) -> Flit {
        let mut flit = self.current.pop_front().expect("offered flit exists");
        if let Some(pkt) = flit.packet_mut() {
            pkt.inject_cycle = Some(now);
        }
        self.sent += 1;
        self.released = !flit.last;
        if flit.last {
            self.pending.pop_front();
            self.load();
        }
        flit
    }

    fn commit(&mut self, _now: Cycle, _io: &mut Exchange<'_>) {}
}

/// A delivered flit as seen by a [`CaptureSink`].
#[derive(Debug, Clone)]
pub struct Captured {
    pub cycle: Cycle,
    pub flit: Flit,
}

/// Records every flit it receives. Readiness follows a caller-supplied
/// pattern so tests can apply backpressure.
pub struct CaptureSink {
    name: String,
    input: PortId,
    ready: Box<dyn Fn(Cycle) -> bool>,
    pub received: Vec<Captured>,
    packets: u64,
}

impl CaptureSink {
    pub fn new(name: &str, input: PortId) -> Self {
        Self::with_ready(name, input, |_| true)
    }

    pub fn with_ready(name: &str, input: PortId, ready: impl Fn(Cycle) -> bool + 'static) -> Self {
        CaptureSink {
            name: name.to_string(),
            input,
            ready: Box::new(ready),
            received: Vec::new(),
            packets: 0,
        }
    }

    /// Cycle at which flit `index` of packet `id` arrived.
    pub fn arrival(&self, id: u64, index: u16) -> Option<Cycle> {
        self.received
            .iter()
            .find(|c| c.flit.packet_id == id && c.flit.index == index)
            .map(|c| c.cycle)
    }
}

impl Block for CaptureSink {
    fn name(&self) -> &str {
        &self.name
    }

    fn inputs(&self) -> Vec<PortId> {
        vec![self.input]
    }

    fn outputs(&self) -> Vec<PortId> {
        Vec::new()
    }

    fn drive(&self, now: Cycle, sig: &mut Signals<'_>) {
        sig.set_ready(self.input, (self.ready)(now));
    }

    fn emit(&mut self, _now: Cycle, _port: PortId) -> Flit {
        unreachable!("sink has no outputs")
    }

    fn commit(&mut self, now: Cycle, io: &mut Exchange<'_>) {
        if let Some(flit) = io.take(self.input) {
            if flit.last {
                self.packets += 1;
            }
            self.received.push(Captured { cycle: now, flit });
        }
    }

    fn retired(&self) -> u64 {
        self.packets
    }
}
