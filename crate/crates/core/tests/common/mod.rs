// SPDX-License-Identifier: Apache-2.0

//! Fixtures shared by the integration test targets.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xqsim::crossbar::{Crossbar, CrossbarConfig};
use xqsim::kernel::{BlockId, CaptureSink, Cycle, Kernel, ScriptedSource};
use xqsim::model::{Packet, TaskId, TaskSequence};
use xqsim::sched::SchedulerKind;

pub const N: usize = 7;

/// A packet whose next hop is fabric output `target`.
pub fn to_port(id: u64, bytes: u32, target: TaskId) -> Packet {
    let seq = if target == TaskId::Egress {
        TaskSequence::bypass()
    } else {
        TaskSequence::through(&[target]).unwrap()
    };
    Packet::synthetic(id, bytes).with_sequence(1, seq, Cycle::ZERO)
}

pub fn idle_inputs() -> Vec<Vec<(Cycle, Packet)>> {
    vec![Vec::new(); N]
}

/// A crossbar between scripted sources and capture sinks.
pub struct Rig {
    pub k: Kernel,
    xbar: BlockId,
    sinks: Vec<BlockId>,
}

impl Rig {
    /// One source per input, one sink per output. Outputs in `stalled`
    /// never accept.
    pub fn new(cfg: CrossbarConfig, traffic: Vec<Vec<(Cycle, Packet)>>, stalled: &[usize]) -> Self {
        let mut k = Kernel::new();
        k.set_invariant_checks(true);
        let ins = k.ports(N);
        let outs = k.ports(N);
        for (i, pkts) in traffic.into_iter().enumerate() {
            k.add(ScriptedSource::new(&format!("src{i}"), ins[i], pkts))
                .unwrap();
        }
        let xbar = k
            .add(Crossbar::new("xbar", cfg, ins, outs.clone()))
            .unwrap();
        let sinks = (0..N)
            .map(|j| {
                let sink = if stalled.contains(&j) {
                    CaptureSink::with_ready(&format!("sink{j}"), outs[j], |_| false)
                } else {
                    CaptureSink::new(&format!("sink{j}"), outs[j])
                };
                k.add(sink).unwrap()
            })
            .collect();
        Rig { k, xbar, sinks }
    }

    pub fn sink(&self, j: usize) -> &CaptureSink {
        self.k.get(self.sinks[j]).unwrap()
    }

    pub fn crossbar(&self) -> &Crossbar {
        self.k.get(self.xbar).unwrap()
    }
}

/// First and last egress cycle of a lone MTU frame entering at cycle 0.
pub fn mtu_crossing(store_and_forward: bool) -> (Cycle, Cycle) {
    let mut t = idle_inputs();
    t[6] = vec![(Cycle(0), to_port(9, 1518, TaskId::LoadBalancer))];
    let cfg = CrossbarConfig {
        store_and_forward,
        ..CrossbarConfig::default()
    };
    let mut rig = Rig::new(cfg, t, &[]);
    rig.k.run_for(100).unwrap();
    let s = rig.sink(TaskId::LoadBalancer.port());
    (s.arrival(9, 0).unwrap(), s.arrival(9, 23).unwrap())
}

/// Straight argmax: first index holding the largest non-zero fill.
pub fn brute_force_lqf(fills: &[u32]) -> Option<usize> {
    let max = *fills.iter().max()?;
    if max == 0 {
        return None;
    }
    fills.iter().position(|&f| f == max)
}

/// Random multi-input workload through an FCFS crossbar. Returns an error
/// naming the first output whose departures are not in head-arrival order.
pub fn fcfs_order_check(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traffic = idle_inputs();
    for (i, list) in traffic.iter_mut().enumerate() {
        let mut at = rng.random_range(0..8u64);
        for n in 0..rng.random_range(5..30u64) {
            let target = TaskId::ALL[rng.random_range(0..N)];
            let bytes = [64, 100, 512, 1518][rng.random_range(0..4)];
            // The input index rides in the low bits of the id.
            list.push((Cycle(at), to_port(n * 8 + i as u64, bytes, target)));
            at += rng.random_range(0..40);
        }
    }
    let cfg = CrossbarConfig {
        scheduler: SchedulerKind::Fcfs,
        ..CrossbarConfig::default()
    };
    let mut rig = Rig::new(cfg, traffic, &[]);
    rig.k.run_for(3_000).map_err(|e| e.to_string())?;
    for j in 0..N {
        let heads: Vec<(Cycle, u64)> = rig
            .sink(j)
            .received
            .iter()
            .filter_map(|c| {
                let p = c.flit.packet()?;
                Some((p.inject_cycle.unwrap(), p.id % 8))
            })
            .collect();
        if heads.windows(2).any(|w| w[1] < w[0]) {
            return Err(format!("output {j} departs out of order: {heads:?}"));
        }
        let queued: u32 = (0..N)
            .map(|i| rig.crossbar().queue(i, j).packet_count())
            .sum();
        if queued != 0 {
            return Err(format!("output {j} still holds {queued} packets"));
        }
    }
    Ok(())
}

pub fn sample_pcap() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/sample.pcap")
}

/// Timestamps in nanoseconds, read straight from little-endian record
/// headers.
pub fn raw_timestamps(data: &[u8]) -> Vec<u64> {
    let u32_at = |o: usize| u32::from_le_bytes(data[o..o + 4].try_into().unwrap());
    let nanos = u32_at(0) == 0xa1b2_3c4d;
    let mut out = Vec::new();
    let mut off = 24;
    while off < data.len() {
        let sec = u64::from(u32_at(off));
        let frac = u64::from(u32_at(off + 4));
        let caplen = u32_at(off + 8) as usize;
        out.push(sec * 1_000_000_000 + if nanos { frac } else { frac * 1000 });
        off += 16 + caplen;
    }
    out
}
