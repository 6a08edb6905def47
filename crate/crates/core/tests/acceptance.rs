// SPDX-License-Identifier: Apache-2.0

//! Acceptance criteria A1 to A10. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::process::ExitCode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

mod common;

use common::{
    brute_force_lqf, fcfs_order_check, idle_inputs, mtu_crossing, raw_timestamps, sample_pcap,
    to_port, Rig, N,
};
use xqsim::config::{ExperimentConfig, FabricKind, Scenario};
use xqsim::crossbar::{CrossbarConfig, TRAVERSAL_CYCLES};
use xqsim::kernel::{flit_count, Cycle};
use xqsim::model::TaskId;
use xqsim::sched::{lqf_select, SchedulerKind, SchedulerState};
use xqsim::traffic::{
    mean_flits, read_pcap, GeneratorConfig, RunReport, SequenceMode, SyntheticSource, TraceConfig,
    TraceSequences, TraceSource, FRAME_SIZES,
};
use xqsim::world::{run, sweep_points, World};

const RATES: [f64; 5] = [60.0, 70.0, 80.0, 90.0, 100.0];
const PP: f64 = 1.0;

type Outcome = Result<String, String>;

/// Every sweep the criteria read, keyed by (scenario, fabric, scheduler).
struct Sweeps(HashMap<(Scenario, FabricKind, SchedulerKind), Vec<RunReport>>);

impl Sweeps {
    fn collect() -> Self {
        let mut keys = vec![(Scenario::Fixed, FabricKind::Xq, SchedulerKind::Rr)];
        keys.extend(SchedulerKind::ALL.map(|s| (Scenario::Random, FabricKind::Xq, s)));
        keys.push((Scenario::Random, FabricKind::Cioq, SchedulerKind::Rr));
        let jobs: Vec<_> = keys
            .iter()
            .flat_map(|&(scenario, fabric, scheduler)| {
                let base = ExperimentConfig {
                    scenario,
                    fabric,
                    scheduler,
                    ..ExperimentConfig::default()
                };
                sweep_points(&base, &RATES)
                    .into_iter()
                    .map(move |c| ((scenario, fabric, scheduler), c))
            })
            .collect();
        let done: Vec<_> = jobs
            .into_par_iter()
            .map(|(key, cfg)| (key, run(&cfg).expect("sweep point")))
            .collect();
        let mut map: HashMap<_, Vec<RunReport>> = HashMap::new();
        for (key, r) in done {
            map.entry(key).or_default().push(r);
        }
        for v in map.values_mut() {
            v.sort_by(|a, b| a.rate_percent.total_cmp(&b.rate_percent));
        }
        Sweeps(map)
    }

    fn get(
        &self,
        scenario: Scenario,
        fabric: FabricKind,
        scheduler: SchedulerKind,
    ) -> &[RunReport] {
        &self.0[&(scenario, fabric, scheduler)]
    }
}

/// Rates below 100% where throughput departs from offered load, or where
/// packets were dropped if `zero_drops` is set.
fn below_line_rate(label: &str, reports: &[RunReport], zero_drops: bool) -> Vec<String> {
    reports
        .iter()
        .filter(|r| r.rate_percent < 100.0)
        .filter_map(|r| {
            let gap = (r.throughput_percent - r.offered_percent).abs();
            (gap > PP || (zero_drops && r.drop_count > 0)).then(|| {
                format!(
                    "{label}@{}: {} drops, throughput {:.2} vs offered {:.2}",
                    r.rate_percent, r.drop_count, r.throughput_percent, r.offered_percent
                )
            })
        })
        .collect()
}

fn verdict(failures: Vec<String>, detail: String) -> Outcome {
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(failures.join("; "))
    }
}

fn a1(s: &Sweeps) -> Outcome {
    let rr = s.get(Scenario::Fixed, FabricKind::Xq, SchedulerKind::Rr);
    let mut fail = below_line_rate("rr", rr, true);
    let full = &rr[4];
    if full.drop_rate_percent > 0.5 {
        fail.push(format!(
            "100%: drop rate {:.3}% > 0.5%",
            full.drop_rate_percent
        ));
    }
    let thr: Vec<String> = rr
        .iter()
        .map(|r| format!("{:.2}", r.throughput_percent))
        .collect();
    verdict(
        fail,
        format!(
            "throughput [{}], drops at 100% {:.3}%",
            thr.join(", "),
            full.drop_rate_percent
        ),
    )
}

fn a2(s: &Sweeps) -> Outcome {
    let mut fail = Vec::new();
    let mut full = BTreeMap::new();
    let mut low_drops = Vec::new();
    for (kind, floor) in [
        (SchedulerKind::Rr, 97.0),
        (SchedulerKind::Lqf, 99.5),
        (SchedulerKind::Fcfs, 99.0),
    ] {
        let reports = s.get(Scenario::Random, FabricKind::Xq, kind);
        fail.extend(below_line_rate(kind.label(), reports, false));
        let drops: u64 = reports[..4].iter().map(|r| r.drop_count).sum();
        low_drops.push(format!("{kind} {drops}"));
        let r = &reports[4];
        if r.throughput_percent < floor {
            fail.push(format!(
                "{kind}@100: throughput {:.2} < {floor}",
                r.throughput_percent
            ));
        }
        full.insert(kind.label(), (r.throughput_percent, r.drop_rate_percent));
    }
    let (rr, lqf, fcfs) = (full["rr"].1, full["lqf"].1, full["fcfs"].1);
    if !(lqf <= fcfs && fcfs <= rr) {
        fail.push(format!(
            "drop order lqf {lqf:.3} <= fcfs {fcfs:.3} <= rr {rr:.3} violated"
        ));
    }
    let detail = full
        .iter()
        .map(|(k, (t, d))| format!("{k} {t:.2}%/{d:.3}%"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        fail,
        format!(
            "at 100%: {detail}; packets dropped below 100%: {}",
            low_drops.join(", ")
        ),
    )
}

fn a3(s: &Sweeps) -> Outcome {
    let mins: Vec<u64> = s
        .get(Scenario::Fixed, FabricKind::Xq, SchedulerKind::Rr)
        .iter()
        .map(|r| r.latency_min_cycles)
        .collect();
    let fail = if mins.iter().all(|&m| m == 28) {
        vec![]
    } else {
        vec![format!("minimum latency per rate {mins:?}, expected 28")]
    };
    verdict(fail, format!("minimum latency {mins:?} cycles"))
}

fn a4() -> Outcome {
    let point = |scenario, rate| ExperimentConfig {
        scenario,
        rate_percent: rate,
        seed: 1,
        ..ExperimentConfig::default()
    };
    let (fixed, random) = rayon::join(
        || run(&point(Scenario::Fixed, 70.0)).unwrap(),
        || run(&point(Scenario::Random, 95.0)).unwrap(),
    );
    let mut fail = Vec::new();
    if !(96.0..=160.0).contains(&fixed.latency_mean_cycles) {
        fail.push(format!(
            "fixed@70 mean {:.1} outside [96, 160]",
            fixed.latency_mean_cycles
        ));
    }
    if !(449.0..=833.0).contains(&random.latency_mean_cycles) {
        fail.push(format!(
            "random@95 mean {:.1} outside [449, 833]",
            random.latency_mean_cycles
        ));
    }
    if !(28..=205).contains(&random.latency_min_cycles) {
        fail.push(format!(
            "random@95 min {} outside [28, 205]",
            random.latency_min_cycles
        ));
    }
    let row = |r: &RunReport| {
        format!(
            "{:.1}/{}/{}",
            r.latency_mean_cycles, r.latency_min_cycles, r.latency_max_cycles
        )
    };
    let detail = format!(
        "mean/min/max fixed@70 {}, random@95 {}",
        row(&fixed),
        row(&random)
    );
    if fail.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{} ({detail})", fail.join("; ")))
    }
}

fn a5(s: &Sweeps) -> Outcome {
    let get = |k| s.get(Scenario::Random, FabricKind::Xq, k);
    let (rr, lqf, fcfs) = (
        get(SchedulerKind::Rr),
        get(SchedulerKind::Lqf),
        get(SchedulerKind::Fcfs),
    );
    let mut fail = Vec::new();
    for i in 0..RATES.len() {
        let (f, r, l) = (
            fcfs[i].latency_max_cycles,
            rr[i].latency_max_cycles,
            lqf[i].latency_max_cycles,
        );
        if !(f <= r && r <= l) {
            fail.push(format!("{}%: max fcfs {f} rr {r} lqf {l}", RATES[i]));
        }
    }
    for kind in SchedulerKind::ALL {
        let means: Vec<f64> = get(kind).iter().map(|r| r.latency_mean_cycles).collect();
        if means.windows(2).any(|w| w[1] < w[0]) {
            fail.push(format!("{kind} mean latency not monotone: {means:.1?}"));
        }
    }
    let maxes = |v: &[RunReport]| v.iter().map(|r| r.latency_max_cycles).collect::<Vec<_>>();
    verdict(
        fail,
        format!(
            "max fcfs {:?} rr {:?} lqf {:?}",
            maxes(fcfs),
            maxes(rr),
            maxes(lqf)
        ),
    )
}

fn a6(s: &Sweeps) -> Outcome {
    let cioq = s.get(Scenario::Random, FabricKind::Cioq, SchedulerKind::Rr);
    let xq = s.get(Scenario::Random, FabricKind::Xq, SchedulerKind::Rr);
    let thr: Vec<f64> = cioq.iter().map(|r| r.throughput_percent).collect();
    let mut fail = Vec::new();
    if let Some(t) = thr.iter().find(|t| !(45.0..=65.0).contains(*t)) {
        fail.push(format!("cioq throughput {t:.2} outside [45, 65]"));
    }
    let spread =
        thr.iter().copied().fold(f64::MIN, f64::max) - thr.iter().copied().fold(f64::MAX, f64::min);
    if spread > 5.0 {
        fail.push(format!("cioq throughput spread {spread:.2}pp > 5pp"));
    }
    let ratio = xq[4].throughput_percent / cioq[4].throughput_percent;
    if ratio < 1.5 {
        fail.push(format!("xq/cioq ratio {ratio:.2} < 1.5"));
    }
    verdict(
        fail,
        format!("cioq throughput {thr:.2?}, xq/cioq at 100% {ratio:.2}"),
    )
}

fn rr_starvation() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..1000 {
        let watched = rng.random_range(0..N);
        let mut s = SchedulerState::new(SchedulerKind::Rr, N, 8192);
        s.on_complete(rng.random_range(0..N));
        let mut since = 0;
        for _ in 0..64 {
            let mut occupied: Vec<bool> = (0..N).map(|_| rng.random_bool(0.5)).collect();
            occupied[watched] = true;
            let q = s.select(&occupied, &[0; N]).ok_or("nothing selected")?;
            s.on_complete(q);
            since = if q == watched { 0 } else { since + 1 };
            if since >= N {
                return Err(format!(
                    "trial {trial}: queue {watched} waited {since} completions"
                ));
            }
        }
    }
    Ok(())
}

fn lqf_brute_force() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1f);
    for round in 0..100_000 {
        let hi = [2u32, 16, 8192][round % 3];
        let fills: Vec<u32> = (0..N).map(|_| rng.random_range(0..=hi)).collect();
        if lqf_select(&fills) != brute_force_lqf(&fills) {
            return Err(format!("lqf disagrees on {fills:?}"));
        }
    }
    Ok(())
}

fn small(
    seed: u64,
    scheduler: SchedulerKind,
    scenario: Scenario,
    queue_bytes: u32,
) -> ExperimentConfig {
    ExperimentConfig {
        scenario,
        scheduler,
        seed,
        queue_bytes,
        total_packets: 3_000,
        warmup_packets: 100,
        measured_packets: 2_800,
        check_invariants: true,
        ..ExperimentConfig::default()
    }
}

/// Byte accounting and capacity on every crosspoint after every cycle, then
/// packet-level conservation and intact delivery at the sink.
fn conservation_and_integrity(cfg: &ExperimentConfig) -> Result<(), String> {
    let mut w = World::new(cfg).map_err(|e| e.to_string())?;
    while !w.drained() {
        w.step().map_err(|e| e.to_string())?;
        for q in w.crossbar().unwrap().queues() {
            if !(q.fill() <= q.reserved() && q.reserved() <= q.capacity()) {
                return Err(format!("cycle {}: queue bounds broken", w.now()));
            }
            if q.enqueued_bytes != q.dequeued_bytes + u64::from(q.fill()) {
                return Err(format!("cycle {}: queue bytes not conserved", w.now()));
            }
        }
        if w.now().0 > 2_000_000 {
            return Err("no drain".into());
        }
    }
    let r = w.report();
    if r.injected != r.delivered + r.queue_drops + r.policy_drops || r.in_flight != 0 {
        return Err(format!("packet conservation broken: {r:?}"));
    }
    let sizes: HashMap<u64, u32> = w
        .injector()
        .log()
        .iter()
        .map(|l| (l.id, l.frame_bytes))
        .collect();
    let mut seen = HashSet::new();
    for a in w.sink().arrivals() {
        let want = flit_count(sizes[&a.id] as usize).unwrap() as u64;
        if !seen.insert(a.id) || a.frame_bytes != sizes[&a.id] || a.flits() != want {
            return Err(format!("packet {} arrived damaged", a.id));
        }
    }
    Ok(())
}

/// Two inputs stream into two different outputs at once; every flit takes
/// exactly the traversal time.
fn no_hol_microbench() -> Result<(), String> {
    let mut t = idle_inputs();
    t[0] = (0..20)
        .map(|i| (Cycle(0), to_port(i, 512, TaskId::Firewall)))
        .collect();
    t[1] = (0..20)
        .map(|i| (Cycle(0), to_port(100 + i, 512, TaskId::Aes)))
        .collect();
    let mut rig = Rig::new(CrossbarConfig::default(), t, &[]);
    rig.k.run_for(400).map_err(|e| e.to_string())?;
    for (port, first_id) in [(TaskId::Firewall.port(), 0), (TaskId::Aes.port(), 100)] {
        let got = &rig.sink(port).received;
        if got.len() != 20 * 8 {
            return Err(format!("output {port} got {} flits", got.len()));
        }
        for c in got {
            let entered = 8 * (c.flit.packet_id - first_id) + u64::from(c.flit.index);
            if c.cycle.0 - entered != TRAVERSAL_CYCLES {
                return Err(format!(
                    "output {port}: flit took {} cycles",
                    c.cycle.0 - entered
                ));
            }
        }
    }
    Ok(())
}

fn determinism() -> Result<(), String> {
    let cfg = small(11, SchedulerKind::Lqf, Scenario::Random, 8192);
    let a = serde_json::to_string(&run(&cfg).unwrap()).unwrap();
    let b = serde_json::to_string(&run(&cfg).unwrap()).unwrap();
    if a == b {
        Ok(())
    } else {
        Err("two seeded runs differ".into())
    }
}

fn a7() -> Outcome {
    type Check = (&'static str, Box<dyn Fn() -> Result<(), String> + Sync>);
    let mut checks: Vec<Check> = vec![
        ("rr starvation", Box::new(rr_starvation)),
        ("lqf argmax", Box::new(lqf_brute_force)),
        (
            "fcfs order",
            Box::new(|| (0..64).try_for_each(fcfs_order_check)),
        ),
        ("no hol", Box::new(no_hol_microbench)),
        ("determinism", Box::new(determinism)),
    ];
    for (i, sched) in SchedulerKind::ALL.into_iter().enumerate() {
        for (j, scenario) in [Scenario::Fixed, Scenario::Random].into_iter().enumerate() {
            for (k, bytes) in [1536u32, 8192].into_iter().enumerate() {
                let seed = (i * 4 + j * 2 + k) as u64;
                checks.push((
                    "conservation",
                    Box::new(move || {
                        conservation_and_integrity(&small(seed, sched, scenario, bytes))
                    }),
                ));
            }
        }
    }
    let fail: Vec<String> = checks
        .par_iter()
        .filter_map(|(name, check)| check().err().map(|e| format!("{name}: {e}")))
        .collect();
    verdict(fail, format!("{} checks", checks.len()))
}

fn a8() -> Outcome {
    let (first, last) = mtu_crossing(false);
    let (_, saf_last) = mtu_crossing(true);
    // The last flit enters the crossbar at cycle 23.
    let mut fail = Vec::new();
    if first >= Cycle(23) {
        fail.push(format!(
            "first flit left at {first}, after the tail entered"
        ));
    }
    let added = saf_last - last;
    if added < 20 {
        fail.push(format!("store-and-forward adds only {added} cycles"));
    }
    verdict(
        fail,
        format!("first flit out at {first}, last at {last}; store-and-forward adds {added}"),
    )
}

fn a9(s: &Sweeps) -> Outcome {
    let mut fail = Vec::new();
    for (mode, flows) in [
        (SequenceMode::Fixed { flows: 4 }, 4usize),
        (SequenceMode::Random, 720),
    ] {
        let mut g = SyntheticSource::new(GeneratorConfig {
            rate_percent: 70.0,
            mode,
            seed: 1,
            ..GeneratorConfig::default()
        })
        .unwrap();
        let n = 50_000u64;
        let mut sizes = BTreeMap::new();
        let mut flow_counts = BTreeMap::new();
        let mut idle = 0u64;
        for id in 0..n {
            let pkt = g.make_packet(id);
            *sizes.entry(pkt.frame_bytes).or_insert(0u64) += 1;
            *flow_counts.entry(pkt.flow_hint.unwrap()).or_insert(0u64) += 1;
            idle += g.next_gap();
        }
        for s in FRAME_SIZES {
            let share = 100.0 * sizes.get(&s).copied().unwrap_or(0) as f64 / n as f64;
            if (share - 100.0 / 6.0).abs() > PP {
                fail.push(format!("{mode:?}: size {s} at {share:.2}%"));
            }
        }
        if flow_counts.len() != flows {
            fail.push(format!("{mode:?}: {} distinct flows", flow_counts.len()));
        }
        let expect = 100.0 / flows as f64;
        if flows == 4 {
            for (f, c) in &flow_counts {
                let share = 100.0 * *c as f64 / n as f64;
                if (share - expect).abs() > PP {
                    fail.push(format!("flow {f} at {share:.2}%"));
                }
            }
        }
        let words = n as f64 * mean_flits(&FRAME_SIZES);
        let load = 100.0 * words / (words + idle as f64);
        if (load - 70.0).abs() > PP {
            fail.push(format!("{mode:?}: load {load:.2}%"));
        }
    }
    // Offered load of every sweep point as measured by the system.
    let mut worst: f64 = 0.0;
    for r in s.0.values().flatten() {
        let gap = (r.offered_percent - r.rate_percent).abs();
        worst = worst.max(gap);
        if gap > PP {
            fail.push(format!(
                "{} {} {}@{}: offered {:.2}",
                r.scenario, r.fabric, r.scheduler, r.rate_percent, r.offered_percent
            ));
        }
    }
    verdict(
        fail,
        format!("histograms within 1pp, worst sweep offered-load error {worst:.2}pp"),
    )
}

fn a10() -> Outcome {
    const CLOCK_HZ: f64 = 20e6;
    let mut fail = Vec::new();
    let raw = raw_timestamps(&std::fs::read(sample_pcap()).unwrap());
    let packets = read_pcap(&sample_pcap()).unwrap();
    let src = TraceSource::new(packets, CLOCK_HZ, None, TraceSequences::Modulo, 1).unwrap();
    let schedule = src.schedule();
    for k in (0..raw.len()).step_by(raw.len() / 10).take(10) {
        // 50 ns per cycle.
        let want = Cycle((raw[k] - raw[0]) / 50);
        if schedule[k] != want {
            fail.push(format!("packet {k} at {} not {want}", schedule[k]));
        }
    }
    let captured: HashSet<Cycle> = schedule.into_iter().collect();
    let mut offered = Vec::new();
    for sequences in [TraceSequences::Modulo, TraceSequences::Random] {
        let cfg = ExperimentConfig {
            scenario: Scenario::Trace,
            clock_hz: CLOCK_HZ,
            trace: Some(TraceConfig {
                pcap: sample_pcap(),
                augment_percent: Some(95.0),
                sequences,
            }),
            check_invariants: true,
            ..ExperimentConfig::default()
        };
        let mut w = World::new(&cfg).unwrap();
        w.run().unwrap();
        let cycles: HashSet<Cycle> = w.injector().log().iter().map(|r| r.cycle).collect();
        if !captured.is_subset(&cycles) {
            fail.push(format!("{sequences:?}: captured packets moved"));
        }
        let r = w.report();
        if (r.offered_percent - 95.0).abs() > 2.0 {
            fail.push(format!("{sequences:?}: offered {:.2}%", r.offered_percent));
        }
        if r.injected != r.delivered + r.queue_drops + r.policy_drops + r.in_flight {
            fail.push(format!("{sequences:?}: conservation broken"));
        }
        offered.push(format!("{:.2}", r.offered_percent));
    }
    verdict(
        fail,
        format!("10 timestamps exact, augmented load {}", offered.join("/")),
    )
}

fn main() -> ExitCode {
    let sweeps = Sweeps::collect();
    let results: Vec<(&str, Outcome)> = vec![
        ("A1 line rate, fixed flows", a1(&sweeps)),
        ("A2 random flows at full load", a2(&sweeps)),
        ("A3 minimum latency", a3(&sweeps)),
        ("A4 latency bands", a4()),
        ("A5 scheduler latency ordering", a5(&sweeps)),
        ("A6 cioq head-of-line saturation", a6(&sweeps)),
        ("A7 property checks", a7()),
        ("A8 virtual cut-through", a8()),
        ("A9 generator statistics", a9(&sweeps)),
        ("A10 trace replay", a10()),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
