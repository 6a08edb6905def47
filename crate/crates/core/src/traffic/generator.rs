// SPDX-License-Identifier: Apache-2.0

//! Synthetic traffic.
//!
//! Offered load counts datapath slots: at 100% the generator keeps the link
//! busy every cycle, at 50% one cycle in two. Gaps between packets are
//! geometric, which is what a per-cycle Bernoulli dispatch decision gives.

use std::net::Ipv4Addr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use super::PacketSource;
use crate::kernel::{flit_count, Cycle};
use crate::model::{permutation_rank, Headers, Packet, TaskId, RANDOM_FLOW_BASE};
use crate::{Error, Result};

pub const FRAME_SIZES: [u32; 6] = [64, 128, 256, 512, 1024, 1518];

/// How packets are tagged with a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceMode {
    /// Uniform over flows `1..=flows`.
    Fixed { flows: u32 },
    /// A uniformly random ordering of all six engines per packet, tagged as
    /// flow `RANDOM_FLOW_BASE + rank`.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub rate_percent: f64,
    pub frame_sizes: Vec<u32>,
    pub mode: SequenceMode,
    pub total_packets: u64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            rate_percent: 100.0,
            frame_sizes: FRAME_SIZES.to_vec(),
            mode: SequenceMode::Fixed { flows: 4 },
            total_packets: 52_000,
            seed: 1,
        }
    }
}

/// Mean datapath words per packet when sizes are drawn uniformly.
pub fn mean_flits(sizes: &[u32]) -> f64 {
    let total: usize = sizes
        .iter()
        .map(|&s| flit_count(s as usize).unwrap_or(0))
        .sum();
    total as f64 / sizes.len() as f64
}

/// Mean idle cycles between packets for the given load.
pub fn mean_gap(rate_percent: f64, mean_flits: f64) -> f64 {
    mean_flits * (100.0 / rate_percent - 1.0)
}

/// Random, fully deterministic header fields for a synthetic packet.
pub(crate) fn random_headers(rng: &mut impl Rng) -> Headers {
    Headers {
        ipv4: true,
        src_ip: Ipv4Addr::from(0x0a00_0000 | rng.random_range(0..0x0100_0000u32)),
        dst_ip: Ipv4Addr::from(0x0a00_0000 | rng.random_range(0..0x0100_0000u32)),
        ip_proto: 17,
        src_port: rng.random_range(1024..=u16::MAX),
        dst_port: rng.random(),
        tos: 0,
    }
}

/// Draws a uniformly random engine ordering and returns its flow type.
pub(crate) fn random_order_flow(rng: &mut impl Rng) -> u32 {
    let mut order = TaskId::ENGINES;
    order.shuffle(rng);
    RANDOM_FLOW_BASE + permutation_rank(&order)
}

pub struct SyntheticSource {
    cfg: GeneratorConfig,
    rng: ChaCha8Rng,
    gap: Option<Geometric>,
    produced: u64,
}

impl SyntheticSource {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        if !(cfg.rate_percent > 0.0 && cfg.rate_percent <= 100.0) {
            return Err(Error::Config(format!(
                "rate {}% is outside (0, 100]",
                cfg.rate_percent
            )));
        }
        if cfg.frame_sizes.is_empty() {
            return Err(Error::Config("no frame sizes".into()));
        }
        for &s in &cfg.frame_sizes {
            flit_count(s as usize)?;
        }
        if let SequenceMode::Fixed { flows: 0 } = cfg.mode {
            return Err(Error::Config("at least one flow is required".into()));
        }
        let m = mean_gap(cfg.rate_percent, mean_flits(&cfg.frame_sizes));
        let gap = if m > 0.0 {
            Some(Geometric::new(1.0 / (1.0 + m)).map_err(|e| Error::Config(e.to_string()))?)
        } else {
            None
        };
        Ok(SyntheticSource {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            gap,
            produced: 0,
        })
    }

    /// Idle cycles before the next packet.
    pub fn next_gap(&mut self) -> u64 {
        self.gap.map_or(0, |g| g.sample(&mut self.rng))
    }

    pub fn make_packet(&mut self, id: u64) -> Packet {
        let size = *self
            .cfg
            .frame_sizes
            .choose(&mut self.rng)
            .expect("sizes are non-empty");
        let flow = match self.cfg.mode {
            SequenceMode::Fixed { flows } => self.rng.random_range(1..=flows),
            SequenceMode::Random => random_order_flow(&mut self.rng),
        };
        let headers = random_headers(&mut self.rng);
        Packet::new(id, size, headers).with_flow(flow)
    }

    pub fn produced(&self) -> u64 {
        self.produced
    }
}

impl PacketSource for SyntheticSource {
    fn next_packet(&mut self, free_at: Cycle) -> Option<(Cycle, Packet)> {
        if self.produced >= self.cfg.total_packets {
            return None;
        }
        let gap = if self.produced == 0 {
            0
        } else {
            self.next_gap()
        };
        let pkt = self.make_packet(self.produced);
        self.produced += 1;
        Some((free_at + gap, pkt))
    }
}
