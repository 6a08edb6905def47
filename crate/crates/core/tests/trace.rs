// SPDX-License-Identifier: Apache-2.0

//! Trace replay against the bundled 1000-packet capture.

use std::collections::HashSet;

mod common;

use common::{raw_timestamps, sample_pcap as sample};
use xqsim::config::{ExperimentConfig, Scenario};
use xqsim::kernel::Cycle;
use xqsim::traffic::{ns_to_cycles, read_pcap, TraceConfig, TraceSequences, TraceSource};
use xqsim::world::{run, World};

const CLOCK_HZ: f64 = 20e6;

fn trace_config(augment: Option<f64>, sequences: TraceSequences) -> ExperimentConfig {
    ExperimentConfig {
        scenario: Scenario::Trace,
        clock_hz: CLOCK_HZ,
        trace: Some(TraceConfig {
            pcap: sample(),
            augment_percent: augment,
            sequences,
        }),
        check_invariants: true,
        ..ExperimentConfig::default()
    }
}

#[test]
fn timestamps_map_to_cycles_exactly() {
    let raw = raw_timestamps(&std::fs::read(sample()).unwrap());
    assert_eq!(raw.len(), 1000);
    let packets = read_pcap(&sample()).unwrap();
    let src = TraceSource::new(packets, CLOCK_HZ, None, TraceSequences::Modulo, 1).unwrap();
    let schedule = src.schedule();
    // 50 ns per cycle at 20 MHz.
    for k in (0..1000).step_by(100) {
        let ns = raw[k] - raw[0];
        assert_eq!(ns % 50, 0);
        assert_eq!(schedule[k], Cycle(ns / 50), "packet {k}");
        assert_eq!(ns_to_cycles(ns, CLOCK_HZ), ns / 50);
    }
}

#[test]
fn replay_injects_at_captured_cycles() {
    let cfg = trace_config(None, TraceSequences::Modulo);
    let mut w = World::new(&cfg).unwrap();
    w.run().unwrap();
    let raw = raw_timestamps(&std::fs::read(sample()).unwrap());
    let log = w.injector().log();
    assert_eq!(log.len(), 1000);
    for (rec, ts) in log.iter().zip(&raw) {
        assert_eq!(rec.cycle, Cycle((ts - raw[0]) / 50));
    }
    let r = w.report();
    assert_eq!(
        r.injected,
        r.delivered + r.queue_drops + r.policy_drops + r.in_flight
    );
    assert!(
        (r.offered_percent - 45.0).abs() < 3.0,
        "native load {}",
        r.offered_percent
    );
    // A handful of ARP frames cannot be classified.
    assert!(r.unclassified > 0 && r.unclassified < 30);
}

#[test]
fn augmentation_reaches_target_and_keeps_timestamps() {
    let packets = read_pcap(&sample()).unwrap();
    let captured: HashSet<Cycle> =
        TraceSource::new(packets, CLOCK_HZ, None, TraceSequences::Modulo, 1)
            .unwrap()
            .schedule()
            .into_iter()
            .collect();
    for sequences in [TraceSequences::Modulo, TraceSequences::Random] {
        let cfg = trace_config(Some(95.0), sequences);
        let mut w = World::new(&cfg).unwrap();
        w.run().unwrap();
        let cycles: HashSet<Cycle> = w.injector().log().iter().map(|r| r.cycle).collect();
        assert!(captured.is_subset(&cycles), "captured packets moved");
        let r = w.report();
        assert!(r.injected > 1500, "only {} packets", r.injected);
        assert!(
            (r.offered_percent - 95.0).abs() <= 2.0,
            "offered {}",
            r.offered_percent
        );
        assert_eq!(r.in_flight, 0);
        assert_eq!(r.injected, r.delivered + r.queue_drops + r.policy_drops);
    }
}

#[test]
fn target_below_native_load_inserts_nothing() {
    let packets = read_pcap(&sample()).unwrap();
    let mut src =
        TraceSource::new(packets, CLOCK_HZ, Some(20.0), TraceSequences::Modulo, 1).unwrap();
    assert!(src.native_load_percent() > 20.0);
    let mut free = Cycle::ZERO;
    let mut n = 0;
    while let Some((at, pkt)) = xqsim::traffic::PacketSource::next_packet(&mut src, free) {
        free = at + pkt.frame_bytes.div_ceil(64) as u64;
        n += 1;
    }
    assert_eq!(n, 1000);
    assert_eq!(src.inserted(), 0);
}

#[test]
fn trace_runs_are_deterministic() {
    let cfg = trace_config(Some(80.0), TraceSequences::Random);
    assert_eq!(run(&cfg).unwrap(), run(&cfg).unwrap());
}
