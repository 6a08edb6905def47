// SPDX-License-Identifier: Apache-2.0

//! Assembles the full system and runs one experiment point.
//!
//! ```text
//! injector -> parser -> fabric in 6
//! fabric out j -> engine j -> fabric in j      (j = 0..5)
//! fabric out 6 -> sink
//! ```

use crate::cioq::{Cioq, CioqConfig};
use crate::config::{ExperimentConfig, FabricKind, Scenario};
use crate::crossbar::{Crossbar, CrossbarConfig, Fabric};
use crate::engines::Engine;
use crate::kernel::{BlockId, Cycle, Kernel};
use crate::model::{FlowTable, TaskId};
use crate::parser::{Classifier, Parser};
use crate::traffic::{
    measure, read_pcap, GeneratorConfig, Injector, PacketSource, RunReport, SequenceMode, Sink,
    SyntheticSource, TraceSequences, TraceSource, Window,
};
use crate::{Error, Result};

/// Crossbar ports: six engines plus egress.
pub const PORTS: usize = 7;

/// Cycles allowed after the last injection for the system to empty.
const DRAIN_LIMIT: u64 = 1_000_000;

/// Flow table and classifier for a scenario.
pub fn flow_setup(cfg: &ExperimentConfig) -> (FlowTable, Classifier) {
    let random = matches!(cfg.scenario, Scenario::Random)
        || cfg.trace.as_ref().is_some_and(|t| {
            cfg.scenario == Scenario::Trace && t.sequences == TraceSequences::Random
        });
    if random {
        return (FlowTable::all_engine_orders(), Classifier::Synthetic);
    }
    let fixed = cfg.fixed_flow_table();
    if cfg.scenario == Scenario::Trace {
        let flows = fixed.len() as u32;
        let mut by_residue = FlowTable::new();
        for (f, seq) in fixed.iter() {
            by_residue.configure_flow(f % flows, seq.clone());
        }
        (by_residue, Classifier::DstPortModulo { flows })
    } else {
        (fixed, Classifier::Synthetic)
    }
}

/// Packet source for a configuration. Reads the capture in trace mode.
pub fn source_for(cfg: &ExperimentConfig) -> Result<Box<dyn PacketSource>> {
    match cfg.scenario {
        Scenario::Fixed | Scenario::Random => {
            let mode = if cfg.scenario == Scenario::Random {
                SequenceMode::Random
            } else {
                SequenceMode::Fixed {
                    flows: cfg.fixed_flow_table().len() as u32,
                }
            };
            Ok(Box::new(SyntheticSource::new(GeneratorConfig {
                rate_percent: cfg.rate_percent,
                frame_sizes: cfg.frame_sizes.clone(),
                mode,
                total_packets: cfg.total_packets,
                seed: cfg.seed,
            })?))
        }
        Scenario::Trace => {
            let t = cfg
                .trace
                .as_ref()
                .ok_or_else(|| Error::Config("trace scenario without [trace]".into()))?;
            let packets = read_pcap(&t.pcap)?;
            Ok(Box::new(TraceSource::new(
                packets,
                cfg.clock_hz,
                t.augment_percent,
                t.sequences,
                cfg.seed,
            )?))
        }
    }
}

pub struct World {
    cfg: ExperimentConfig,
    kernel: Kernel,
    injector: BlockId,
    parser: BlockId,
    fabric: BlockId,
    engines: Vec<BlockId>,
    sink: BlockId,
}

impl World {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let source = source_for(cfg)?;
        Self::with_source(cfg, source)
    }

    /// Builds the system around an arbitrary packet source.
    pub fn with_source(cfg: &ExperimentConfig, source: Box<dyn PacketSource>) -> Result<Self> {
        let mut k = Kernel::new();
        k.set_invariant_checks(cfg.check_invariants);
        let to_parser = k.port();
        let fab_in = k.ports(PORTS);
        let fab_out = k.ports(PORTS);

        let injector = k.add(Injector::new("injector", to_parser, source))?;
        let (table, classifier) = flow_setup(cfg);
        let parser = k.add(Parser::new(
            "parser",
            to_parser,
            fab_in[TaskId::Egress.port()],
            cfg.parser_latency,
            classifier,
            table,
        ))?;
        let fabric = match cfg.fabric {
            FabricKind::Xq => k.add(Crossbar::new(
                "crossbar",
                CrossbarConfig {
                    ports: PORTS,
                    queue_bytes: cfg.queue_bytes,
                    scheduler: cfg.scheduler,
                    store_and_forward: cfg.store_and_forward,
                },
                fab_in.clone(),
                fab_out.clone(),
            ))?,
            FabricKind::Cioq => k.add(Cioq::new(
                "cioq",
                CioqConfig {
                    ports: PORTS,
                    input_bytes: cfg.queue_bytes,
                    output_bytes: cfg.queue_bytes,
                },
                fab_in.clone(),
                fab_out.clone(),
            ))?,
        };
        let mut engines = Vec::new();
        for kind in TaskId::ENGINES {
            let j = kind.port();
            engines.push(k.add(Engine::new(
                cfg.engine_config(kind),
                cfg.tables.clone(),
                fab_out[j],
                fab_in[j],
            ))?);
        }
        let sink = k.add(Sink::new("sink", fab_out[TaskId::Egress.port()]))?;
        Ok(World {
            cfg: cfg.clone(),
            kernel: k,
            injector,
            parser,
            fabric,
            engines,
            sink,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut Kernel {
        &mut self.kernel
    }

    pub fn now(&self) -> Cycle {
        self.kernel.now()
    }

    pub fn injector(&self) -> &Injector {
        self.kernel.get(self.injector).expect("injector")
    }

    pub fn parser(&self) -> &Parser {
        self.kernel.get(self.parser).expect("parser")
    }

    pub fn parser_mut(&mut self) -> &mut Parser {
        self.kernel.get_mut(self.parser).expect("parser")
    }

    pub fn sink(&self) -> &Sink {
        self.kernel.get(self.sink).expect("sink")
    }

    pub fn engine(&self, kind: TaskId) -> &Engine {
        self.kernel.get(self.engines[kind.port()]).expect("engine")
    }

    pub fn fabric(&self) -> &dyn Fabric {
        match self.cfg.fabric {
            FabricKind::Xq => self.kernel.get::<Crossbar>(self.fabric).expect("crossbar"),
            FabricKind::Cioq => self.kernel.get::<Cioq>(self.fabric).expect("cioq"),
        }
    }

    pub fn crossbar(&self) -> Option<&Crossbar> {
        self.kernel.get(self.fabric)
    }

    pub fn step(&mut self) -> Result<()> {
        self.kernel.step()
    }

    /// Everything injected has been delivered or dropped.
    pub fn drained(&self) -> bool {
        let inj = self.injector();
        inj.is_done() && self.kernel.retired() == inj.injected()
    }

    /// Runs until the system has drained.
    pub fn run(&mut self) -> Result<()> {
        let cap = self.cfg.max_cycles.unwrap_or(u64::MAX);
        while !self.drained() {
            if self.now().0 >= cap {
                return Err(self.stuck("cycle limit reached"));
            }
            if let Some(end) = self.injector().end() {
                if self.now() - end > DRAIN_LIMIT {
                    return Err(self.stuck("system did not drain"));
                }
            }
            self.kernel.step()?;
        }
        Ok(())
    }

    fn stuck(&self, what: &str) -> Error {
        Error::Invariant {
            block: "world".into(),
            cycle: self.now().0,
            detail: format!(
                "{what}: {} injected, {} retired",
                self.injector().injected(),
                self.kernel.retired()
            ),
        }
    }

    fn window(&self) -> Window {
        let inj = self.injector();
        if self.cfg.scenario == Scenario::Trace {
            Window {
                warmup: 0,
                measured: inj.injected() as usize,
                cutoff: None,
            }
        } else {
            Window {
                warmup: self.cfg.warmup_packets as usize,
                measured: self.cfg.measured_packets as usize,
                cutoff: inj.end(),
            }
        }
    }

    pub fn report(&self) -> RunReport {
        let inj = self.injector();
        let sink = self.sink();
        let fabric = self.fabric();
        let end = inj.end().unwrap_or(self.now());
        let m = measure(
            inj.log(),
            sink.arrivals(),
            fabric.dropped_ids(),
            self.window(),
            end,
            self.cfg.clock_hz,
        );
        let queue_drops = fabric.dropped_ids().len() as u64;
        let policy_drops: u64 = TaskId::ENGINES
            .iter()
            .map(|&k| self.engine(k).policy_drops())
            .sum();
        let delivered = sink.arrivals().len() as u64;
        let rate_percent = match (&self.cfg.trace, self.cfg.scenario) {
            (Some(t), Scenario::Trace) => t.augment_percent.unwrap_or(m.offered_percent),
            _ => self.cfg.rate_percent,
        };
        let mut r = RunReport {
            scenario: self.cfg.scenario,
            scheduler: self.cfg.scheduler,
            fabric: self.cfg.fabric,
            rate_percent,
            seed: self.cfg.seed,
            clock_hz: self.cfg.clock_hz,
            injected: inj.injected(),
            delivered,
            queue_drops,
            policy_drops,
            in_flight: inj
                .injected()
                .saturating_sub(delivered + queue_drops + policy_drops),
            unclassified: self.parser().unclassified(),
            cycles: self.now().0,
            offered_percent: 0.0,
            throughput_percent: 0.0,
            throughput_gbps: 0.0,
            latency_samples: 0,
            latency_mean_cycles: 0.0,
            latency_min_cycles: 0,
            latency_max_cycles: 0,
            latency_mean_us: 0.0,
            latency_min_us: 0.0,
            latency_max_us: 0.0,
            processing_floor_cycles: self.cfg.processing_floor_cycles(),
            drop_count: 0,
            drop_rate_percent: 0.0,
            partial: false,
            drop_matrix: fabric.drop_matrix(),
        };
        r.set_measurement(&m);
        r
    }
}

/// Builds, runs and reports one experiment point.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut w = World::new(cfg)?;
    w.run()?;
    Ok(w.report())
}

/// Expands `base` into one config per rate. Point `i` runs with seed
/// `base.seed + i`, so sweeps of different schedulers or fabrics over the
/// same rates see the same arrivals.
pub fn sweep_points(base: &ExperimentConfig, rates: &[f64]) -> Vec<ExperimentConfig> {
    rates
        .iter()
        .enumerate()
        .map(|(i, &rate_percent)| ExperimentConfig {
            rate_percent,
            seed: base.seed + i as u64,
            ..base.clone()
        })
        .collect()
}
