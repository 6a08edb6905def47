// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::{Arrival, InjectRecord};
use crate::config::{FabricKind, Scenario};
use crate::kernel::{cycles_to_us, flit_count, Cycle};
use crate::sched::SchedulerKind;

/// Which packets count towards the statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    /// Arrivals skipped before measuring.
    pub warmup: usize,
    /// Arrivals measured after the warmup.
    pub measured: usize,
    /// Ignore arrivals after this cycle. Keeps the drain phase after the
    /// last injection out of the throughput figure.
    pub cutoff: Option<Cycle>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: u64,
    pub mean: f64,
    pub min: u64,
    pub max: u64,
}

impl LatencyStats {
    pub fn from_cycles(values: impl IntoIterator<Item = u64>) -> Self {
        let mut s = LatencyStats {
            min: u64::MAX,
            ..Default::default()
        };
        let mut sum = 0u128;
        for v in values {
            s.samples += 1;
            sum += u128::from(v);
            s.min = s.min.min(v);
            s.max = s.max.max(v);
        }
        if s.samples == 0 {
            s.min = 0;
        } else {
            s.mean = sum as f64 / s.samples as f64;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub latency: LatencyStats,
    /// Delivered datapath words per cycle over the window, in percent.
    pub throughput_percent: f64,
    pub throughput_gbps: f64,
    /// Injected datapath words per cycle over the window, in percent.
    pub offered_percent: f64,
    /// Queue drops among the packets injected inside the window.
    pub drops: u64,
    pub drop_rate_percent: f64,
    /// Fewer arrivals than the window asks for.
    pub partial: bool,
}

fn flits(bytes: u32) -> u64 {
    flit_count(bytes as usize).unwrap_or(0) as u64
}

/// Computes the statistics of a finished run.
///
/// Latency and throughput come from the measured arrivals (in arrival
/// order); offered load and drops from the packets with injection ids in
/// the same index range.
pub fn measure(
    log: &[InjectRecord],
    arrivals: &[Arrival],
    dropped_ids: &[u64],
    window: Window,
    injection_end: Cycle,
    clock_hz: f64,
) -> Measurement {
    let mut m = Measurement::default();
    let start = window.warmup;
    let stop = start.saturating_add(window.measured);

    let in_time = |a: &&Arrival| window.cutoff.is_none_or(|c| a.arrival <= c);
    let measured: Vec<&Arrival> = arrivals
        .iter()
        .take_while(|a| in_time(a))
        .skip(start)
        .take(window.measured)
        .collect();
    m.partial = measured.len() < window.measured;
    m.latency = LatencyStats::from_cycles(measured.iter().map(|a| a.latency()));
    if let (Some(first), Some(last)) = (measured.first(), measured.last()) {
        let span = last.arrival - first.arrival;
        if span > 0 {
            let words: u64 = measured[1..].iter().map(|a| a.flits()).sum();
            let bytes: u64 = measured[1..].iter().map(|a| u64::from(a.frame_bytes)).sum();
            m.throughput_percent = 100.0 * words as f64 / span as f64;
            m.throughput_gbps = bytes as f64 * 8.0 / (span as f64 / clock_hz) / 1e9;
        }
    }

    let injected = log.len();
    let lo = start.min(injected);
    let hi = stop.min(injected);
    if hi > lo {
        let words: u64 = log[lo..hi].iter().map(|r| flits(r.frame_bytes)).sum();
        let until = log.get(hi).map_or(injection_end, |r| r.cycle);
        let span = until - log[lo].cycle;
        if span > 0 {
            m.offered_percent = 100.0 * words as f64 / span as f64;
        }
        let (lo_id, hi_id) = (log[lo].id, log[hi - 1].id);
        m.drops = dropped_ids
            .iter()
            .filter(|&&id| (lo_id..=hi_id).contains(&id))
            .count() as u64;
        m.drop_rate_percent = 100.0 * m.drops as f64 / (hi - lo) as f64;
    }
    m
}

/// Outcome of one experiment point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub scheduler: SchedulerKind,
    pub fabric: FabricKind,
    pub rate_percent: f64,
    pub seed: u64,
    pub clock_hz: f64,
    pub injected: u64,
    pub delivered: u64,
    pub queue_drops: u64,
    pub policy_drops: u64,
    pub in_flight: u64,
    pub unclassified: u64,
    pub cycles: u64,
    pub offered_percent: f64,
    pub throughput_percent: f64,
    pub throughput_gbps: f64,
    pub latency_samples: u64,
    pub latency_mean_cycles: f64,
    pub latency_min_cycles: u64,
    pub latency_max_cycles: u64,
    pub latency_mean_us: f64,
    pub latency_min_us: f64,
    pub latency_max_us: f64,
    /// Mean engine service time along a path with no queueing.
    pub processing_floor_cycles: Option<f64>,
    pub drop_count: u64,
    pub drop_rate_percent: f64,
    pub partial: bool,
    /// Dropped packets per (fabric input, fabric output).
    pub drop_matrix: Vec<Vec<u64>>,
}

impl RunReport {
    pub fn set_measurement(&mut self, m: &Measurement) {
        let us = |c: f64| c * 1e6 / self.clock_hz;
        self.offered_percent = m.offered_percent;
        self.throughput_percent = m.throughput_percent;
        self.throughput_gbps = m.throughput_gbps;
        self.latency_samples = m.latency.samples;
        self.latency_mean_cycles = m.latency.mean;
        self.latency_min_cycles = m.latency.min;
        self.latency_max_cycles = m.latency.max;
        self.latency_mean_us = us(m.latency.mean);
        self.latency_min_us = cycles_to_us(m.latency.min, self.clock_hz);
        self.latency_max_us = cycles_to_us(m.latency.max, self.clock_hz);
        self.drop_count = m.drops;
        self.drop_rate_percent = m.drop_rate_percent;
        self.partial = m.partial;
    }
}
