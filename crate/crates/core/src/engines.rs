// SPDX-License-Identifier: Apache-2.0

//! Processing engines.
//!
//! An engine has one crossbar-facing ingress and egress. Inside, a load
//! balancer steers whole packets to the least-loaded of its parallel units,
//! each unit processes store-and-forward at its own datapath width, and a
//! round-robin arbiter merges finished packets back onto the egress.
//! Engines model timing; the only functional effects are header-level.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::kernel::{Block, Cycle, Exchange, Flit, PortId, Signals, FLIT_BYTES};
use crate::model::{Packet, TaskId};
use crate::sched::rr_select;
use crate::{Error, Result};

/// Pipeline depth of each engine kind, in cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineLatencies {
    pub crc: u64,
    pub firewall: u64,
    pub nat: u64,
    pub aes: u64,
    pub ipv4_router: u64,
    pub load_balancer: u64,
}

impl Default for EngineLatencies {
    fn default() -> Self {
        EngineLatencies {
            crc: 6,
            firewall: 3,
            nat: 3,
            aes: 12,
            ipv4_router: 3,
            load_balancer: 3,
        }
    }
}

impl EngineLatencies {
    pub fn get(&self, kind: TaskId) -> u64 {
        match kind {
            TaskId::Crc => self.crc,
            TaskId::Firewall => self.firewall,
            TaskId::Nat => self.nat,
            TaskId::Aes => self.aes,
            TaskId::Ipv4Router => self.ipv4_router,
            TaskId::LoadBalancer => self.load_balancer,
            TaskId::Egress => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub kind: TaskId,
    pub units: usize,
    /// Bytes each unit consumes per cycle.
    pub datapath_bytes: u32,
    pub latency: u64,
    pub ingress_bytes: u32,
}

impl EngineConfig {
    pub fn new(kind: TaskId, latencies: &EngineLatencies) -> Self {
        let (units, datapath_bytes) = match kind {
            TaskId::Crc => (2, 32),
            TaskId::Aes => (4, 16),
            _ => (1, 64),
        };
        EngineConfig {
            kind,
            units,
            datapath_bytes,
            latency: latencies.get(kind),
            ingress_bytes: 8192,
        }
    }

    /// Cycles from first flit in to first flit out on an idle unit.
    pub fn service_time(&self, frame_bytes: u32) -> u64 {
        self.latency + u64::from(frame_bytes.div_ceil(self.datapath_bytes))
    }

    pub fn validate(&self) -> Result<()> {
        if self.units == 0 || self.datapath_bytes == 0 {
            return Err(Error::Config(format!("{}: empty engine", self.kind)));
        }
        if self.units as u32 * self.datapath_bytes < FLIT_BYTES as u32 {
            return Err(Error::Config(format!(
                "{}: {} units x {} B/cycle is below line rate",
                self.kind, self.units, self.datapath_bytes
            )));
        }
        if (self.ingress_bytes as usize) < FLIT_BYTES {
            return Err(Error::Config(format!(
                "{}: ingress FIFO too small",
                self.kind
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteEntry {
    pub prefix: Ipv4Addr,
    pub len: u8,
    pub port: u8,
}

/// Functional tables of the firewall, NAT, router and load balancer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineTables {
    pub blocked_src_ports: BTreeSet<u16>,
    pub nat: BTreeMap<Ipv4Addr, Ipv4Addr>,
    pub routes: Vec<RouteEntry>,
    pub lb_ports: u8,
}

impl Default for EngineTables {
    fn default() -> Self {
        EngineTables {
            blocked_src_ports: BTreeSet::new(),
            nat: BTreeMap::new(),
            routes: vec![RouteEntry {
                prefix: Ipv4Addr::UNSPECIFIED,
                len: 0,
                port: 0,
            }],
            lb_ports: 4,
        }
    }
}

/// Longest-prefix match. Port 0 when nothing matches.
pub fn longest_prefix_match(routes: &[RouteEntry], addr: Ipv4Addr) -> u8 {
    let a = u32::from(addr);
    routes
        .iter()
        .filter(|r| {
            let mask = if r.len == 0 {
                0
            } else {
                u32::MAX << (32 - u32::from(r.len.min(32)))
            };
            a & mask == u32::from(r.prefix) & mask
        })
        .max_by_key(|r| r.len)
        .map_or(0, |r| r.port)
}

/// Least-loaded unit by ingress fill, ties to the lower index.
pub fn lb_steer(fills: &[u32]) -> usize {
    fills
        .iter()
        .enumerate()
        .min_by_key(|&(i, &f)| (f, i))
        .map_or(0, |(i, _)| i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Drop,
}

/// Header-level effect of an engine, followed by the metadata update.
pub fn apply(
    kind: TaskId,
    pkt: &mut Packet,
    tables: &EngineTables,
    lb_next: &mut u8,
) -> Result<Verdict> {
    match kind {
        TaskId::Firewall => {
            if tables.blocked_src_ports.contains(&pkt.headers.src_port) {
                return Ok(Verdict::Drop);
            }
        }
        TaskId::Nat => {
            if let Some(&to) = tables.nat.get(&pkt.headers.dst_ip) {
                pkt.headers.dst_ip = to;
            }
        }
        TaskId::Ipv4Router => {
            pkt.egress_port = Some(longest_prefix_match(&tables.routes, pkt.headers.dst_ip));
        }
        TaskId::LoadBalancer => {
            pkt.egress_port = Some(*lb_next);
            *lb_next = (*lb_next + 1) % tables.lb_ports.max(1);
        }
        TaskId::Crc | TaskId::Aes | TaskId::Egress => {}
    }
    let meta = pkt
        .meta
        .as_mut()
        .ok_or_else(|| Error::Contract(format!("packet {} reached {kind} unparsed", pkt.id)))?;
    if meta.current_task() != kind {
        return Err(Error::Contract(format!(
            "packet {} reached {kind} but needs {}",
            pkt.id,
            meta.current_task()
        )));
    }
    meta.advance_task()?;
    Ok(Verdict::Pass)
}

#[derive(Debug)]
struct InPacket {
    flits: Vec<Flit>,
    arrived: u32,
    consumed: u32,
    complete: bool,
}

#[derive(Debug)]
struct Finished {
    ready_at: Cycle,
    flits: VecDeque<Flit>,
}

#[derive(Debug, Default)]
struct Unit {
    ingress: VecDeque<InPacket>,
    /// Arrived but not yet consumed bytes.
    fill: u32,
    done: VecDeque<Finished>,
    served_bytes: u64,
    packets: u64,
}

pub struct Engine {
    name: String,
    cfg: EngineConfig,
    tables: EngineTables,
    input: PortId,
    output: PortId,
    units: Vec<Unit>,
    /// Unit receiving the packet currently crossing the ingress.
    steering: Option<usize>,
    grant: Option<usize>,
    last_granted: usize,
    lb_next: u8,
    policy_drops: u64,
    errors: Vec<String>,
}

impl Engine {
    pub fn new(cfg: EngineConfig, tables: EngineTables, input: PortId, output: PortId) -> Self {
        Engine {
            name: cfg.kind.to_string(),
            units: (0..cfg.units).map(|_| Unit::default()).collect(),
            last_granted: cfg.units - 1,
            cfg,
            tables,
            input,
            output,
            steering: None,
            grant: None,
            lb_next: 0,
            policy_drops: 0,
            errors: Vec::new(),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn unit_fills(&self) -> Vec<u32> {
        self.units.iter().map(|u| u.fill).collect()
    }

    /// Bytes processed per unit.
    pub fn served_bytes(&self) -> Vec<u64> {
        self.units.iter().map(|u| u.served_bytes).collect()
    }

    /// Packets processed per unit.
    pub fn served_packets(&self) -> Vec<u64> {
        self.units.iter().map(|u| u.packets).collect()
    }

    pub fn policy_drops(&self) -> u64 {
        self.policy_drops
    }

    /// Complete packets per unit waiting behind the one in service.
    pub fn waiting_packets(&self) -> Vec<usize> {
        self.units
            .iter()
            .map(|u| u.ingress.iter().skip(1).filter(|p| p.complete).count())
            .collect()
    }

    /// Units with nothing left to consume.
    pub fn idle_units(&self) -> Vec<bool> {
        self.units.iter().map(|u| u.ingress.is_empty()).collect()
    }

    fn ingress_target(&self) -> usize {
        self.steering
            .unwrap_or_else(|| lb_steer(&self.unit_fills()))
    }

    fn candidate(&self, now: Cycle) -> Option<usize> {
        self.grant.or_else(|| {
            let ready: Vec<bool> = self
                .units
                .iter()
                .map(|u| u.done.front().is_some_and(|d| d.ready_at <= now))
                .collect();
            rr_select(self.last_granted, &ready)
        })
    }

    fn consume(&mut self, now: Cycle) {
        let dp = self.cfg.datapath_bytes;
        for u in 0..self.units.len() {
            let unit = &mut self.units[u];
            let Some(head) = unit.ingress.front_mut() else {
                continue;
            };
            let take = (head.arrived - head.consumed).min(dp);
            head.consumed += take;
            unit.fill -= take;
            unit.served_bytes += u64::from(take);
            if !(head.complete && head.consumed == head.arrived) {
                continue;
            }
            let done = unit.ingress.pop_front().expect("head exists");
            unit.packets += 1;
            let mut flits: VecDeque<Flit> = done.flits.into();
            let pkt = flits
                .front_mut()
                .and_then(Flit::packet_mut)
                .expect("first flit carries the packet");
            match apply(self.cfg.kind, pkt, &self.tables, &mut self.lb_next) {
                Ok(Verdict::Pass) => unit.done.push_back(Finished {
                    ready_at: now + self.cfg.latency,
                    flits,
                }),
                Ok(Verdict::Drop) => self.policy_drops += 1,
                Err(e) => self.errors.push(e.to_string()),
            }
        }
    }
}

impl Block for Engine {
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
        let target = self.ingress_target();
        let room = self.units[target].fill as usize + FLIT_BYTES <= self.cfg.ingress_bytes as usize;
        sig.set_ready(self.input, room);

        if let Some(u) = self.candidate(now) {
            let flit = &self.units[u]
                .done
                .front()
                .expect("candidate has work")
                .flits[0];
            sig.offer(self.output, flit.tag());
        }
    }

    fn emit(&mut self, now: Cycle, _port: PortId) -> Flit {
        let u = self.candidate(now).expect("offered");
        let unit = &mut self.units[u];
        let pkt = unit.done.front_mut().expect("candidate has work");
        let flit = pkt.flits.pop_front().expect("non-empty packet");
        if flit.last {
            unit.done.pop_front();
            self.grant = None;
            self.last_granted = u;
        } else {
            self.grant = Some(u);
        }
        flit
    }

    fn commit(&mut self, now: Cycle, io: &mut Exchange<'_>) {
        if !io.fired(self.output) && self.grant.is_none() {
            // An offered packet stays granted until it crosses.
            self.grant = self.candidate(now);
        }

        let arrival = io.take(self.input).map(|f| (self.ingress_target(), f));
        self.consume(now);

        if let Some((u, flit)) = arrival {
            let bytes = u32::from(flit.bytes);
            let last = flit.last;
            let unit = &mut self.units[u];
            if flit.is_first() {
                unit.ingress.push_back(InPacket {
                    flits: Vec::new(),
                    arrived: 0,
                    consumed: 0,
                    complete: false,
                });
            }
            let p = unit.ingress.back_mut().expect("packet open");
            p.flits.push(flit);
            p.arrived += bytes;
            p.complete = last;
            unit.fill += bytes;
            self.steering = (!last).then_some(u);
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        if let Some(e) = self.errors.first() {
            return Err(e.clone());
        }
        for (i, u) in self.units.iter().enumerate() {
            if u.fill > self.cfg.ingress_bytes {
                return Err(format!("unit {i} ingress {} B over capacity", u.fill));
            }
            let pending: u32 = u.ingress.iter().map(|p| p.arrived - p.consumed).sum();
            if pending != u.fill {
                return Err(format!("unit {i} fill {} but {pending} B pending", u.fill));
            }
        }
        Ok(())
    }

    fn retired(&self) -> u64 {
        self.policy_drops
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Metadata, TaskSequence};
    use TaskId::*;

    fn parsed(tasks: &[TaskId]) -> Packet {
        let mut p = Packet::synthetic(0, 64);
        p.meta = Some(Metadata::new(
            64,
            0,
            0,
            TaskSequence::new(tasks).unwrap(),
            Cycle(0),
        ));
        p
    }

    #[test]
    fn lb_steer_examples() {
        assert_eq!(lb_steer(&[0, 500]), 0);
        assert_eq!(lb_steer(&[500, 500]), 0);
        assert_eq!(lb_steer(&[500, 0]), 1);
        assert_eq!(lb_steer(&[123]), 0);
    }

    #[test]
    fn service_time_examples() {
        let lat = EngineLatencies::default();
        let crc = EngineConfig::new(Crc, &lat);
        assert_eq!(crc.service_time(64), lat.crc + 2);
        assert_eq!(
            EngineConfig::new(Aes, &lat).service_time(1518),
            lat.aes + 95
        );
        assert_eq!(EngineConfig::new(Nat, &lat).service_time(64), lat.nat + 1);
    }

    #[test]
    fn every_engine_reaches_line_rate() {
        let lat = EngineLatencies::default();
        for kind in TaskId::ENGINES {
            let c = EngineConfig::new(kind, &lat);
            assert!(c.units as u32 * c.datapath_bytes >= 64, "{kind}");
            c.validate().unwrap();
        }
    }

    #[test]
    fn firewall_drops_blocked_source_port() {
        let tables = EngineTables {
            blocked_src_ports: [23].into(),
            ..EngineTables::default()
        };
        let mut p = parsed(&[Firewall, Egress]);
        p.headers.src_port = 23;
        assert_eq!(
            apply(Firewall, &mut p, &tables, &mut 0).unwrap(),
            Verdict::Drop
        );
        p.headers.src_port = 22;
        assert_eq!(
            apply(Firewall, &mut p, &tables, &mut 0).unwrap(),
            Verdict::Pass
        );
        assert_eq!(p.meta.unwrap().next_task, 1);
    }

    #[test]
    fn nat_translates_destination() {
        let from: Ipv4Addr = "10.0.0.5".parse().unwrap();
        let to: Ipv4Addr = "192.168.1.5".parse().unwrap();
        let tables = EngineTables {
            nat: [(from, to)].into(),
            ..EngineTables::default()
        };
        let mut p = parsed(&[Nat, Egress]);
        p.headers.dst_ip = from;
        apply(Nat, &mut p, &tables, &mut 0).unwrap();
        assert_eq!(p.headers.dst_ip, to);
    }

    #[test]
    fn load_balancer_round_robins_ports() {
        let tables = EngineTables::default();
        let mut next = 0;
        let ports: Vec<_> = (0..5)
            .map(|_| {
                let mut p = parsed(&[LoadBalancer, Egress]);
                apply(LoadBalancer, &mut p, &tables, &mut next).unwrap();
                p.egress_port.unwrap()
            })
            .collect();
        assert_eq!(ports, vec![0, 1, 2, 3, 0]);
    }

    #[test]
    fn router_uses_longest_prefix() {
        let routes = vec![
            RouteEntry {
                prefix: Ipv4Addr::UNSPECIFIED,
                len: 0,
                port: 0,
            },
            RouteEntry {
                prefix: "10.0.0.0".parse().unwrap(),
                len: 8,
                port: 1,
            },
            RouteEntry {
                prefix: "10.1.0.0".parse().unwrap(),
                len: 16,
                port: 2,
            },
        ];
        assert_eq!(
            longest_prefix_match(&routes, "10.1.2.3".parse().unwrap()),
            2
        );
        assert_eq!(
            longest_prefix_match(&routes, "10.9.2.3".parse().unwrap()),
            1
        );
        assert_eq!(longest_prefix_match(&routes, "8.8.8.8".parse().unwrap()), 0);
        assert_eq!(longest_prefix_match(&[], "8.8.8.8".parse().unwrap()), 0);
    }

    #[test]
    fn wrong_engine_is_a_contract_violation() {
        let mut p = parsed(&[Crc, Egress]);
        assert!(apply(Nat, &mut p, &EngineTables::default(), &mut 0).is_err());
    }
}
