// SPDX-License-Identifier: Apache-2.0

//! Crosspoint-queued crossbar.
//!
//! Every input owns a demultiplexer that reads the target port from the
//! first flit's sideband and writes the packet into the queue at
//! (input, target). Every output owns a multiplexer whose local scheduler
//! picks the next queue to drain. Packets cut through: the mux may start
//! reading a packet as soon as its first flit is resident.
//!
//! Pipeline of an uncontended flit entering at cycle `t`:
//!
//! | cycle | stage                                        |
//! |-------|----------------------------------------------|
//! | t     | demux input, admission decision              |
//! | t + 1 | demux register, written into the queue       |
//! | t + 2 | scheduled and dequeued into the mux register |
//! | t + 4 | offered on the output port                   |

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::kernel::{Block, Cycle, Exchange, Flit, PortId, Signals};
use crate::sched::{SchedulerKind, SchedulerState};

/// Cycles from demux input to mux output on an idle fabric.
pub const TRAVERSAL_CYCLES: u64 = 4;

/// Cycles from dequeue to the output port.
const MUX_DELAY: u64 = 2;

/// Mux output registers. Two keep the output streaming at one flit per
/// cycle with the dequeue decision taken on registered state.
const MUX_PIPE_DEPTH: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbarConfig {
    pub ports: usize,
    pub queue_bytes: u32,
    pub scheduler: SchedulerKind,
    /// Debug: only schedule a packet once its last flit is resident.
    pub store_and_forward: bool,
}

impl Default for CrossbarConfig {
    fn default() -> Self {
        CrossbarConfig {
            ports: 7,
            queue_bytes: 8192,
            scheduler: SchedulerKind::Rr,
            store_and_forward: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admit,
    Drop,
}

/// A packet is dropped only if the unreserved space is strictly smaller
/// than its size.
pub fn admit(capacity: u32, reserved: u32, packet_size: u32) -> Admission {
    if capacity.saturating_sub(reserved) >= packet_size {
        Admission::Admit
    } else {
        Admission::Drop
    }
}

/// Byte-accounted flit FIFO at one crosspoint.
///
/// `reserved` covers every admitted packet until its flits leave, so
/// `fill <= reserved <= capacity` always holds.
#[derive(Debug, Clone)]
pub struct CrosspointQueue {
    capacity: u32,
    reserved: u32,
    fill: u32,
    flits: VecDeque<Flit>,
    heads: u32,
    tails: u32,
    pub admitted_packets: u64,
    pub dropped_packets: u64,
    pub dropped_bytes: u64,
    pub enqueued_bytes: u64,
    pub dequeued_bytes: u64,
    pub peak_fill: u32,
}

impl CrosspointQueue {
    pub fn new(capacity: u32) -> Self {
        CrosspointQueue {
            capacity,
            reserved: 0,
            fill: 0,
            flits: VecDeque::new(),
            heads: 0,
            tails: 0,
            admitted_packets: 0,
            dropped_packets: 0,
            dropped_bytes: 0,
            enqueued_bytes: 0,
            dequeued_bytes: 0,
            peak_fill: 0,
        }
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    /// Resident bytes.
    pub fn fill(&self) -> u32 {
        self.fill
    }

    pub fn reserved(&self) -> u32 {
        self.reserved
    }

    pub fn len(&self) -> usize {
        self.flits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flits.is_empty()
    }

    /// Packets whose first flit is resident.
    pub fn packet_count(&self) -> u32 {
        self.heads
    }

    /// Decides admission for a whole packet and reserves its space.
    pub fn try_admit(&mut self, packet_size: u32) -> Admission {
        let a = admit(self.capacity, self.reserved, packet_size);
        match a {
            Admission::Admit => {
                self.reserved += packet_size;
                self.admitted_packets += 1;
            }
            Admission::Drop => {
                self.dropped_packets += 1;
                self.dropped_bytes += u64::from(packet_size);
            }
        }
        a
    }

    pub fn push(&mut self, flit: Flit) {
        let bytes = u32::from(flit.bytes);
        assert!(
            self.fill + bytes <= self.reserved,
            "enqueue beyond reservation ({} + {bytes} > {})",
            self.fill,
            self.reserved
        );
        self.fill += bytes;
        self.peak_fill = self.peak_fill.max(self.fill);
        self.enqueued_bytes += u64::from(bytes);
        self.heads += u32::from(flit.is_first());
        self.tails += u32::from(flit.last);
        self.flits.push_back(flit);
    }

    pub fn pop(&mut self) -> Option<Flit> {
        let flit = self.flits.pop_front()?;
        let bytes = u32::from(flit.bytes);
        self.fill -= bytes;
        self.reserved -= bytes;
        self.dequeued_bytes += u64::from(bytes);
        self.heads -= u32::from(flit.is_first());
        self.tails -= u32::from(flit.last);
        Some(flit)
    }

    pub fn front(&self) -> Option<&Flit> {
        self.flits.front()
    }

    /// A packet starts at the front of the queue.
    pub fn has_head(&self) -> bool {
        self.front().is_some_and(Flit::is_first)
    }

    /// The packet at the front is entirely resident.
    pub fn head_complete(&self) -> bool {
        self.has_head() && self.tails > 0
    }

    pub fn check(&self) -> Result<(), String> {
        if self.fill > self.reserved || self.reserved > self.capacity {
            return Err(format!(
                "fill {} / reserved {} / capacity {}",
                self.fill, self.reserved, self.capacity
            ));
        }
        let resident: u64 = self.flits.iter().map(|f| u64::from(f.bytes)).sum();
        if resident != u64::from(self.fill) {
            return Err(format!("fill {} but {resident} bytes resident", self.fill));
        }
        if self.enqueued_bytes != self.dequeued_bytes + u64::from(self.fill) {
            return Err(format!(
                "enqueued {} != dequeued {} + fill {}",
                self.enqueued_bytes, self.dequeued_bytes, self.fill
            ));
        }
        Ok(())
    }
}

/// Queue-drop accounting shared by both fabric models.
pub trait Fabric: Block {
    /// Dropped packets per (input, output) pair.
    fn drop_matrix(&self) -> Vec<Vec<u64>>;

    /// Ids of dropped packets in drop order.
    fn dropped_ids(&self) -> &[u64];
}

#[derive(Debug, Clone, Copy)]
struct Route {
    target: usize,
    admitted: bool,
}

#[derive(Debug)]
struct Mux {
    sched: SchedulerState,
    active: Option<usize>,
    pipe: VecDeque<(Cycle, Flit)>,
}

pub struct Crossbar {
    name: String,
    cfg: CrossbarConfig,
    inputs: Vec<PortId>,
    outputs: Vec<PortId>,
    /// Row-major: queue (i, j) at `i * N + j`.
    queues: Vec<CrosspointQueue>,
    routes: Vec<Option<Route>>,
    stage: Vec<Option<(usize, Flit)>>,
    muxes: Vec<Mux>,
    dropped_ids: Vec<u64>,
}

impl Crossbar {
    pub fn new(name: &str, cfg: CrossbarConfig, inputs: Vec<PortId>, outputs: Vec<PortId>) -> Self {
        let n = cfg.ports;
        assert!(n >= 2, "a crossbar needs at least two ports");
        assert_eq!(inputs.len(), n);
        assert_eq!(outputs.len(), n);
        Crossbar {
            name: name.to_string(),
            inputs,
            outputs,
            queues: (0..n * n)
                .map(|_| CrosspointQueue::new(cfg.queue_bytes))
                .collect(),
            routes: vec![None; n],
            stage: (0..n).map(|_| None).collect(),
            muxes: (0..n)
                .map(|_| Mux {
                    sched: SchedulerState::new(cfg.scheduler, n, cfg.queue_bytes),
                    active: None,
                    pipe: VecDeque::with_capacity(MUX_PIPE_DEPTH),
                })
                .collect(),
            dropped_ids: Vec::new(),
            cfg,
        }
    }

    pub fn ports(&self) -> usize {
        self.cfg.ports
    }

    pub fn queue(&self, input: usize, output: usize) -> &CrosspointQueue {
        &self.queues[input * self.cfg.ports + output]
    }

    pub fn queues(&self) -> &[CrosspointQueue] {
        &self.queues
    }

    fn eligible(&self, output: usize) -> (Vec<bool>, Vec<u32>) {
        let n = self.cfg.ports;
        (0..n)
            .map(|i| {
                let q = self.queue(i, output);
                let ok = if self.cfg.store_and_forward {
                    q.head_complete()
                } else {
                    q.has_head()
                };
                (ok, q.fill())
            })
            .unzip()
    }

    fn admit_arrival(&mut self, input: usize, flit: &Flit) -> Route {
        if flit.is_first() {
            let meta = flit.sideband().unwrap_or_else(|| {
                panic!("{}: packet {} has no sideband", self.name, flit.packet_id)
            });
            let target = meta.current_target();
            assert!(target < self.cfg.ports, "target port {target} out of range");
            let size = meta.packet_size;
            let n = self.cfg.ports;
            let admitted = self.queues[input * n + target].try_admit(size) == Admission::Admit;
            if !admitted {
                self.dropped_ids.push(flit.packet_id);
            }
            let route = Route { target, admitted };
            self.routes[input] = Some(route);
            route
        } else {
            self.routes[input].unwrap_or_else(|| {
                panic!("{}: flit without packet head on input {input}", self.name)
            })
        }
    }
}

impl Block for Crossbar {
    fn name(&self) -> &str {
        &self.name
    }

    fn inputs(&self) -> Vec<PortId> {
        self.inputs.clone()
    }

    fn outputs(&self) -> Vec<PortId> {
        self.outputs.clone()
    }

    fn drive(&self, now: Cycle, sig: &mut Signals<'_>) {
        // Dropping never needs backpressure, so the demux always accepts.
        for &p in &self.inputs {
            sig.set_ready(p, true);
        }
        for (mux, &p) in self.muxes.iter().zip(&self.outputs) {
            if let Some((at, flit)) = mux.pipe.front() {
                if *at <= now {
                    sig.offer(p, flit.tag());
                }
            }
        }
    }

    fn emit(&mut self, _now: Cycle, port: PortId) -> Flit {
        let j = self
            .outputs
            .iter()
            .position(|&p| p == port)
            .expect("own port");
        self.muxes[j].pipe.pop_front().expect("offered flit").1
    }

    fn commit(&mut self, now: Cycle, io: &mut Exchange<'_>) {
        let n = self.cfg.ports;

        let mut arrivals: Vec<Option<(Route, Flit)>> = Vec::with_capacity(n);
        for i in 0..n {
            let a = io.take(self.inputs[i]).map(|flit| {
                let route = self.admit_arrival(i, &flit);
                if flit.last {
                    self.routes[i] = None;
                }
                (route, flit)
            });
            arrivals.push(a);
        }

        for j in 0..n {
            if self.muxes[j].pipe.len() >= MUX_PIPE_DEPTH {
                continue;
            }
            let source = match self.muxes[j].active {
                Some(q) => Some(q),
                None => {
                    let (eligible, fills) = self.eligible(j);
                    let pick = self.muxes[j].sched.select(&eligible, &fills);
                    if let Some(q) = pick {
                        assert!(eligible[q], "scheduler picked ineligible queue {q}");
                    }
                    self.muxes[j].active = pick;
                    pick
                }
            };
            let Some(q) = source else { continue };
            // Under cut-through the next flit may not have arrived yet.
            let Some(flit) = self.queues[q * n + j].pop() else {
                continue;
            };
            let mux = &mut self.muxes[j];
            if flit.last {
                mux.active = None;
                mux.sched.on_complete(q);
            }
            mux.pipe.push_back((now + MUX_DELAY, flit));
        }

        for i in 0..n {
            if let Some((target, flit)) = self.stage[i].take() {
                if flit.is_first() {
                    self.muxes[target].sched.on_arrival(i);
                }
                self.queues[i * n + target].push(flit);
            }
        }

        for (i, a) in arrivals.into_iter().enumerate() {
            if let Some((route, flit)) = a {
                if route.admitted {
                    self.stage[i] = Some((route.target, flit));
                }
            }
        }
    }

    fn check(&self) -> Result<(), String> {
        let n = self.cfg.ports;
        for (k, q) in self.queues.iter().enumerate() {
            q.check()
                .map_err(|e| format!("queue ({}, {}): {e}", k / n, k % n))?;
        }
        for (j, mux) in self.muxes.iter().enumerate() {
            if let Some(pending) = mux.sched.pending() {
                let heads: u32 = (0..n).map(|i| self.queue(i, j).packet_count()).sum();
                if pending != heads as usize {
                    return Err(format!(
                        "output {j}: FCFS holds {pending} indices for {heads} resident packets"
                    ));
                }
            }
        }
        Ok(())
    }

    fn retired(&self) -> u64 {
        self.dropped_ids.len() as u64
    }
}

impl Fabric for Crossbar {
    fn drop_matrix(&self) -> Vec<Vec<u64>> {
        let n = self.cfg.ports;
        (0..n)
            .map(|i| (0..n).map(|j| self.queue(i, j).dropped_packets).collect())
            .collect()
    }

    fn dropped_ids(&self) -> &[u64] {
        &self.dropped_ids
    }
}
