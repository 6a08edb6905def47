// SPDX-License-Identifier: Apache-2.0

//! Packets, sideband metadata, task sequences and the flow table.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};

use crate::kernel::Cycle;
use crate::{Error, Result};

/// A processing step. Each task is bound to one crossbar port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Crc,
    Firewall,
    Nat,
    Aes,
    #[serde(alias = "router")]
    Ipv4Router,
    #[serde(alias = "lb")]
    LoadBalancer,
    Egress,
}

impl TaskId {
    pub const ENGINES: [TaskId; 6] = [
        TaskId::Crc,
        TaskId::Firewall,
        TaskId::Nat,
        TaskId::Aes,
        TaskId::Ipv4Router,
        TaskId::LoadBalancer,
    ];

    pub const ALL: [TaskId; 7] = [
        TaskId::Crc,
        TaskId::Firewall,
        TaskId::Nat,
        TaskId::Aes,
        TaskId::Ipv4Router,
        TaskId::LoadBalancer,
        TaskId::Egress,
    ];

    /// Crossbar output port serving this task.
    pub const fn port(self) -> usize {
        self as usize
    }

    pub fn from_port(port: usize) -> Option<TaskId> {
        Self::ALL.get(port).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            TaskId::Crc => "crc",
            TaskId::Firewall => "firewall",
            TaskId::Nat => "nat",
            TaskId::Aes => "aes",
            TaskId::Ipv4Router => "ipv4_router",
            TaskId::LoadBalancer => "load_balancer",
            TaskId::Egress => "egress",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = match s.to_ascii_lowercase().as_str() {
            "crc" => TaskId::Crc,
            "firewall" | "fw" => TaskId::Firewall,
            "nat" => TaskId::Nat,
            "aes" => TaskId::Aes,
            "ipv4_router" | "router" => TaskId::Ipv4Router,
            "load_balancer" | "lb" => TaskId::LoadBalancer,
            "egress" => TaskId::Egress,
            other => return Err(Error::InvalidSequence(format!("unknown task `{other}`"))),
        };
        Ok(t)
    }
}

/// Longest possible sequence: every engine once, then egress.
pub const MAX_SEQUENCE_LEN: usize = 7;

/// Ordered list of tasks a packet must visit. Always ends with
/// [`TaskId::Egress`] and never repeats a task.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<TaskId>", into = "Vec<TaskId>")]
pub struct TaskSequence(ArrayVec<TaskId, MAX_SEQUENCE_LEN>);

impl TaskSequence {
    pub fn new(tasks: &[TaskId]) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::InvalidSequence("empty sequence".into()));
        }
        if tasks.len() > MAX_SEQUENCE_LEN {
            return Err(Error::InvalidSequence(format!(
                "{} tasks exceed the maximum of {MAX_SEQUENCE_LEN}",
                tasks.len()
            )));
        }
        if tasks.last() != Some(&TaskId::Egress) {
            return Err(Error::InvalidSequence(
                "sequence must end with egress".into(),
            ));
        }
        for (i, t) in tasks.iter().enumerate() {
            if tasks[..i].contains(t) {
                return Err(Error::InvalidSequence(format!("task `{t}` repeats")));
            }
        }
        Ok(TaskSequence(tasks.iter().copied().collect()))
    }

    /// The given engines in order, followed by egress.
    pub fn through(engines: &[TaskId]) -> Result<Self> {
        let mut tasks = engines.to_vec();
        tasks.push(TaskId::Egress);
        Self::new(&tasks)
    }

    /// Straight to egress, bypassing every engine.
    pub fn bypass() -> Self {
        TaskSequence([TaskId::Egress].into_iter().collect())
    }

    pub fn tasks(&self) -> &[TaskId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<TaskId> {
        self.0.get(index).copied()
    }
}

impl TryFrom<Vec<TaskId>> for TaskSequence {
    type Error = Error;

    fn try_from(tasks: Vec<TaskId>) -> Result<Self> {
        Self::new(&tasks)
    }
}

impl From<TaskSequence> for Vec<TaskId> {
    fn from(seq: TaskSequence) -> Self {
        seq.0.to_vec()
    }
}

impl fmt::Display for TaskSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" -> ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// Header fields the parser and engines look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Headers {
    /// False for anything that is not IPv4 (ARP, IPv6, ...).
    pub ipv4: bool,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub ip_proto: u8,
    pub src_port: u16,
    pub dst_port: u16,
    pub tos: u8,
}

impl Default for Headers {
    fn default() -> Self {
        Headers {
            ipv4: true,
            src_ip: Ipv4Addr::UNSPECIFIED,
            dst_ip: Ipv4Addr::UNSPECIFIED,
            ip_proto: 17,
            src_port: 0,
            dst_port: 0,
            tos: 0,
        }
    }
}

impl Headers {
    /// IP precedence bits of the ToS byte.
    pub fn priority_class(&self) -> u8 {
        self.tos >> 5
    }
}

/// Sideband record attached to a packet's first flit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    /// Frame size including Ethernet header and FCS.
    pub packet_size: u32,
    pub flow_type: u32,
    /// Carried along; no scheduler looks at it.
    pub priority_class: u8,
    pub sequence: TaskSequence,
    pub next_task: usize,
    /// Cycle of parser entry.
    pub timestamp: Cycle,
}

impl Metadata {
    pub fn new(
        packet_size: u32,
        flow_type: u32,
        priority_class: u8,
        sequence: TaskSequence,
        timestamp: Cycle,
    ) -> Self {
        Metadata {
            packet_size,
            flow_type,
            priority_class,
            sequence,
            next_task: 0,
            timestamp,
        }
    }

    pub fn current_task(&self) -> TaskId {
        self.sequence.tasks()[self.next_task]
    }

    /// Crossbar output port of the next required task.
    pub fn current_target(&self) -> usize {
        self.current_task().port()
    }

    /// Moves to the following task. Fails when already pointing at egress.
    pub fn advance_task(&mut self) -> Result<()> {
        if self.next_task + 1 >= self.sequence.len() {
            return Err(Error::Contract(format!(
                "advance_task on terminal task `{}`",
                self.current_task()
            )));
        }
        self.next_task += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub id: u64,
    pub frame_bytes: u32,
    /// Flow type assigned by a synthetic generator.
    pub flow_hint: Option<u32>,
    pub headers: Headers,
    /// Set by the parser.
    pub meta: Option<Metadata>,
    pub inject_cycle: Option<Cycle>,
    pub parser_entry_cycle: Option<Cycle>,
    pub sink_arrival_cycle: Option<Cycle>,
    /// Ethernet port picked by the router or load balancer.
    pub egress_port: Option<u8>,
}

impl Packet {
    pub fn new(id: u64, frame_bytes: u32, headers: Headers) -> Self {
        Packet {
            id,
            frame_bytes,
            flow_hint: None,
            headers,
            meta: None,
            inject_cycle: None,
            parser_entry_cycle: None,
            sink_arrival_cycle: None,
            egress_port: None,
        }
    }

    /// A bare IPv4/UDP frame with zeroed headers.
    pub fn synthetic(id: u64, frame_bytes: u32) -> Self {
        Self::new(id, frame_bytes, Headers::default())
    }

    pub fn with_flow(mut self, flow: u32) -> Self {
        self.flow_hint = Some(flow);
        self
    }

    /// Attaches metadata directly, as if the packet had been parsed at `now`.
    pub fn with_sequence(mut self, flow: u32, sequence: TaskSequence, now: Cycle) -> Self {
        self.meta = Some(Metadata::new(
            self.frame_bytes,
            flow,
            self.headers.priority_class(),
            sequence,
            now,
        ));
        self.parser_entry_cycle = Some(now);
        self
    }
}

/// First flow type used for per-packet random sequences. Flow
/// `RANDOM_FLOW_BASE + r` maps to the engine permutation of rank `r`.
pub const RANDOM_FLOW_BASE: u32 = 1000;

/// Number of distinct orderings of the six engines.
pub const ENGINE_PERMUTATIONS: u32 = 720;

/// Mapping from flow type to task sequence. It may be reconfigured between
/// cycles; the parser reads it for every new packet.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowTable {
    entries: BTreeMap<u32, TaskSequence>,
}

impl FlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn configure_flow(&mut self, flow: u32, sequence: TaskSequence) {
        self.entries.insert(flow, sequence);
    }

    /// Validates `tasks` first; on error the table is left unchanged.
    pub fn configure(&mut self, flow: u32, tasks: &[TaskId]) -> Result<()> {
        let seq = TaskSequence::new(tasks)?;
        self.configure_flow(flow, seq);
        Ok(())
    }

    pub fn lookup(&self, flow: u32) -> Option<&TaskSequence> {
        self.entries.get(&flow)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &TaskSequence)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    /// The four fixed flows, numbered 1 to 4.
    pub fn fixed_flows() -> Self {
        use TaskId::*;
        let mut t = FlowTable::new();
        let flows: [&[TaskId]; 4] = [
            &[Crc, Firewall, Aes, LoadBalancer, Nat],
            &[Firewall, Nat, Aes, Ipv4Router],
            &[Crc, Aes, Ipv4Router],
            &[Crc, LoadBalancer],
        ];
        for (i, engines) in flows.iter().enumerate() {
            let seq = TaskSequence::through(engines).expect("static sequences are valid");
            t.configure_flow(i as u32 + 1, seq);
        }
        t
    }

    /// The fixed flows keyed by residue modulo 4, for a classifier that
    /// computes `dst_port % 4`. Flow 4 takes residue 0.
    pub fn fixed_flows_by_residue() -> Self {
        let fixed = Self::fixed_flows();
        let mut t = FlowTable::new();
        for (flow, seq) in fixed.iter() {
            t.configure_flow(flow % 4, seq.clone());
        }
        t
    }

    /// Every ordering of the six engines, keyed by
    /// `RANDOM_FLOW_BASE + permutation_rank`.
    pub fn all_engine_orders() -> Self {
        let mut t = FlowTable::new();
        for rank in 0..ENGINE_PERMUTATIONS {
            let order = permutation_unrank(rank);
            let seq = TaskSequence::through(&order).expect("permutations are valid");
            t.configure_flow(RANDOM_FLOW_BASE + rank, seq);
        }
        t
    }
}

/// Lehmer-code rank of an ordering of the six engines, in `0..720`.
pub fn permutation_rank(order: &[TaskId; 6]) -> u32 {
    let mut rank = 0u32;
    for i in 0..6 {
        let smaller_after = order[i + 1..]
            .iter()
            .filter(|t| t.port() < order[i].port())
            .count() as u32;
        rank = rank * (6 - i as u32) + smaller_after;
    }
    rank
}

/// Inverse of [`permutation_rank`].
pub fn permutation_unrank(mut rank: u32) -> [TaskId; 6] {
    let mut digits = [0u32; 6];
    for i in (0..6).rev() {
        let base = 6 - i as u32;
        digits[i] = rank % base;
        rank /= base;
    }
    let mut pool: Vec<TaskId> = TaskId::ENGINES.to_vec();
    let mut out = [TaskId::Crc; 6];
    for (slot, d) in out.iter_mut().zip(digits) {
        *slot = pool.remove(d as usize);
    }
    out
}
