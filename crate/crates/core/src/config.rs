// SPDX-License-Identifier: Apache-2.0

//! Experiment configuration, loadable from TOML.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engines::{EngineConfig, EngineLatencies, EngineTables};
use crate::kernel::{flit_count, FLIT_BYTES};
use crate::model::{FlowTable, TaskId, TaskSequence};
use crate::parser::PARSER_LATENCY;
use crate::sched::SchedulerKind;
use crate::traffic::{TraceConfig, FRAME_SIZES};
use crate::{Error, Result};

/// Bytes a queue must hold beyond the largest frame.
const ETHERNET_OVERHEAD: u32 = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Four fixed flows, drawn uniformly.
    #[default]
    Fixed,
    /// A random ordering of all engines per packet.
    Random,
    /// Replay of a pcap capture.
    Trace,
}

impl Scenario {
    pub fn label(self) -> &'static str {
        match self {
            Scenario::Fixed => "fixed",
            Scenario::Random => "random",
            Scenario::Trace => "trace",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(Scenario::Fixed),
            "random" => Ok(Scenario::Random),
            "trace" => Ok(Scenario::Trace),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FabricKind {
    /// Crosspoint-queued crossbar.
    #[default]
    Xq,
    /// Input/output-queued crossbar without VOQs.
    Cioq,
}

impl FabricKind {
    pub fn label(self) -> &'static str {
        match self {
            FabricKind::Xq => "xq",
            FabricKind::Cioq => "cioq",
        }
    }
}

impl fmt::Display for FabricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FabricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xq" => Ok(FabricKind::Xq),
            "cioq" => Ok(FabricKind::Cioq),
            other => Err(Error::Config(format!("unknown fabric `{other}`"))),
        }
    }
}

/// Replaces or adds the task sequence of one flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowEntry {
    pub flow: u32,
    pub tasks: TaskSequence,
}

/// One experiment point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub scheduler: SchedulerKind,
    pub fabric: FabricKind,
    /// Offered load in percent of the datapath bandwidth.
    pub rate_percent: f64,
    pub seed: u64,
    pub clock_hz: f64,
    pub queue_bytes: u32,
    pub parser_latency: u64,
    pub total_packets: u64,
    pub warmup_packets: u64,
    pub measured_packets: u64,
    pub frame_sizes: Vec<u32>,
    pub latencies: EngineLatencies,
    pub tables: EngineTables,
    /// Applied on top of the four default flows.
    pub flows: Vec<FlowEntry>,
    pub trace: Option<TraceConfig>,
    /// Debug: the crossbar waits for whole packets before scheduling.
    pub store_and_forward: bool,
    pub check_invariants: bool,
    /// Hard stop; the run fails if it has not drained by then.
    pub max_cycles: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::Fixed,
            scheduler: SchedulerKind::Rr,
            fabric: FabricKind::Xq,
            rate_percent: 100.0,
            seed: 1,
            clock_hz: 200e6,
            queue_bytes: 8192,
            parser_latency: PARSER_LATENCY,
            total_packets: 52_000,
            warmup_packets: 1_000,
            measured_packets: 50_000,
            frame_sizes: FRAME_SIZES.to_vec(),
            latencies: EngineLatencies::default(),
            tables: EngineTables::default(),
            flows: Vec::new(),
            trace: None,
            store_and_forward: false,
            check_invariants: false,
            max_cycles: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Datapath bandwidth in Gbit/s.
    pub fn bandwidth_gbps(&self) -> f64 {
        FLIT_BYTES as f64 * 8.0 * self.clock_hz / 1e9
    }

    /// The four fixed flows with any configured overrides applied.
    pub fn fixed_flow_table(&self) -> FlowTable {
        let mut t = FlowTable::fixed_flows();
        for e in &self.flows {
            t.configure_flow(e.flow, e.tasks.clone());
        }
        t
    }

    pub fn engine_config(&self, kind: TaskId) -> EngineConfig {
        EngineConfig::new(kind, &self.latencies)
    }

    /// Engine service time summed along a packet's path, averaged over the
    /// frame sizes and flows the generator draws from. `None` in trace mode,
    /// where the mix comes from the capture.
    pub fn processing_floor_cycles(&self) -> Option<f64> {
        let mean_service = |kind: TaskId| {
            let e = self.engine_config(kind);
            let total: u64 = self.frame_sizes.iter().map(|&b| e.service_time(b)).sum();
            total as f64 / self.frame_sizes.len() as f64
        };
        match self.scenario {
            Scenario::Random => Some(TaskId::ENGINES.iter().map(|&k| mean_service(k)).sum()),
            Scenario::Fixed => {
                let table = self.fixed_flow_table();
                let total: f64 = table
                    .iter()
                    .flat_map(|(_, seq)| seq.tasks().iter().filter(|&&t| t != TaskId::Egress))
                    .map(|&k| mean_service(k))
                    .sum();
                Some(total / table.len() as f64)
            }
            Scenario::Trace => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.rate_percent > 0.0 && self.rate_percent <= 100.0) {
            return bad(format!(
                "rate_percent {} is outside (0, 100]",
                self.rate_percent
            ));
        }
        if !(self.clock_hz > 0.0 && self.clock_hz.is_finite()) {
            return bad(format!("clock_hz {} must be positive", self.clock_hz));
        }
        if self.queue_bytes < 1518 + ETHERNET_OVERHEAD {
            return bad(format!(
                "queue_bytes {} cannot hold a maximum-size frame",
                self.queue_bytes
            ));
        }
        if self.frame_sizes.is_empty() {
            return bad("frame_sizes is empty".into());
        }
        for &s in &self.frame_sizes {
            if s > 1518 {
                return bad(format!("frame size {s} exceeds 1518 bytes"));
            }
            flit_count(s as usize).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.warmup_packets + self.measured_packets > self.total_packets {
            return bad(format!(
                "warmup {} + measured {} exceed total_packets {}",
                self.warmup_packets, self.measured_packets, self.total_packets
            ));
        }
        if self.tables.lb_ports == 0 {
            return bad("tables.lb_ports must be at least 1".into());
        }
        for r in &self.tables.routes {
            if r.len > 32 {
                return bad(format!(
                    "route {}/{} has an invalid prefix",
                    r.prefix, r.len
                ));
            }
        }
        let table = self.fixed_flow_table();
        let n = table.len() as u32;
        if table.iter().map(|(f, _)| f).ne(1..=n) {
            return bad("flows must be numbered 1..=N without gaps".into());
        }
        for kind in TaskId::ENGINES {
            self.engine_config(kind).validate()?;
        }
        if self.scenario == Scenario::Trace && self.trace.is_none() {
            return bad("scenario `trace` needs a [trace] section with a pcap path".into());
        }
        if let Some(t) = &self.trace {
            if let Some(a) = t.augment_percent {
                if !(a > 0.0 && a <= 100.0) {
                    return bad(format!("trace.augment_percent {a} is outside (0, 100]"));
                }
            }
        }
        Ok(())
    }
}
