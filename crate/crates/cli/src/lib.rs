// SPDX-License-Identifier: Apache-2.0

//! Experiment driver behind the `xqsim` binary.
//!
//! Every command resolves a list of [`ExperimentConfig`] points, runs them in
//! parallel and writes the reports to an output directory:
//!
//! * `results.csv`: one row per point, columns as in [`ResultRow`]
//! * `results.json`: the full reports, drop matrices included
//! * `drops.csv`: one row per point and crosspoint with its dropped packets
//! * `summary.txt`: a fixed-width table for reading

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use xqsim::config::{ExperimentConfig, FabricKind, Scenario};
use xqsim::sched::SchedulerKind;
use xqsim::traffic::{RunReport, SampleTrace, TraceConfig};
use xqsim::world::{run, sweep_points};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Sim(#[from] xqsim::Error),

    #[error("{}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl CliError {
    fn output(path: &Path, e: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        CliError::Output {
            path: path.to_owned(),
            source: e.into(),
        }
    }

    /// 2 for configuration errors, 3 for unreadable captures, 4 for a
    /// violated simulator invariant, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        use xqsim::Error as E;
        match self {
            CliError::Sim(E::Config(_) | E::InvalidSequence(_) | E::InvalidFrame(_)) => 2,
            CliError::Sim(E::Pcap { .. }) => 3,
            CliError::Sim(E::Invariant { .. } | E::Contract(_)) => 4,
            CliError::Sim(E::Io(_)) | CliError::Output { .. } => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(
    name = "xqsim",
    version,
    about = "Crosspoint-queued packet-processing simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a single experiment point.
    Run {
        #[command(flatten)]
        point: PointArgs,
        /// Offered load in percent of the datapath bandwidth.
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        scheduler: Option<SchedulerKind>,
        #[arg(long)]
        fabric: Option<FabricKind>,
    },
    /// Run every scheduler x fabric x rate combination. Point `i` of the
    /// rate list runs with seed `seed + i`. In trace mode the rates are
    /// augmentation targets.
    Sweep {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, value_delimiter = ',', default_value = "60,70,80,90,100")]
        rates: Vec<f64>,
        #[arg(long, visible_alias = "scheduler", value_delimiter = ',')]
        schedulers: Vec<SchedulerKind>,
        #[arg(long, visible_alias = "fabric", value_delimiter = ',')]
        fabrics: Vec<FabricKind>,
    },
    /// Mean, minimum and maximum latency in cycles for fixed and random
    /// flows at 70% and 95% load.
    Table1 {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long)]
        scheduler: Option<SchedulerKind>,
    },
    /// Write a synthetic capture with clock-aligned timestamps.
    GenTrace {
        /// Output pcap file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        packets: usize,
        /// Load in percent at the given clock.
        #[arg(long, default_value_t = 45.0)]
        load: f64,
        #[arg(long, default_value_t = 20.0)]
        clock_mhz: f64,
        #[arg(long, default_value_t = 2019)]
        seed: u64,
    },
}

/// Settings shared by the simulation commands. Flags override the config
/// file, which overrides the built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct PointArgs {
    /// TOML file with any `ExperimentConfig` keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Capture to replay; implies `--scenario trace` unless given.
    #[arg(long)]
    pub pcap: Option<PathBuf>,
    /// Fill capture gaps with synthetic packets up to this load.
    #[arg(long)]
    pub augment: Option<f64>,
    #[arg(long)]
    pub clock_mhz: Option<f64>,
    /// Check kernel and queue invariants every cycle.
    #[arg(long)]
    pub check_invariants: bool,
    /// Output directory.
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
}

impl PointArgs {
    /// The config file (or defaults) with the flags applied. Not validated.
    pub fn base_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.scenario {
            cfg.scenario = s;
        } else if self.pcap.is_some() {
            cfg.scenario = Scenario::Trace;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(mhz) = self.clock_mhz {
            cfg.clock_hz = mhz * 1e6;
        }
        if let Some(pcap) = &self.pcap {
            match &mut cfg.trace {
                Some(t) => t.pcap = pcap.clone(),
                None => {
                    cfg.trace = Some(TraceConfig {
                        pcap: pcap.clone(),
                        augment_percent: None,
                        sequences: Default::default(),
                    })
                }
            }
        }
        if let Some(a) = self.augment {
            let t = cfg.trace.as_mut().ok_or_else(|| {
                xqsim::Error::Config(
                    "--augment needs a capture (--pcap or [trace] in the config)".into(),
                )
            })?;
            t.augment_percent = Some(a);
        }
        cfg.check_invariants |= self.check_invariants;
        Ok(cfg)
    }
}

/// Fails with the capture's path if trace mode points at a missing file.
fn check_capture(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.scenario != Scenario::Trace {
        return Ok(());
    }
    let t = cfg.trace.as_ref().ok_or_else(|| {
        xqsim::Error::Config("trace scenario needs --pcap or a [trace] section".into())
    })?;
    if !t.pcap.is_file() {
        return Err(xqsim::Error::Pcap {
            path: t.pcap.clone(),
            offset: 0,
            msg: "no such file".into(),
        }
        .into());
    }
    Ok(())
}

/// Expands a sweep. Scheduler and fabric lists default to the base config's
/// single value.
pub fn sweep_grid(
    base: &ExperimentConfig,
    rates: &[f64],
    schedulers: &[SchedulerKind],
    fabrics: &[FabricKind],
) -> Vec<ExperimentConfig> {
    let schedulers = if schedulers.is_empty() {
        &[base.scheduler][..]
    } else {
        schedulers
    };
    let fabrics = if fabrics.is_empty() {
        &[base.fabric][..]
    } else {
        fabrics
    };
    let mut out = Vec::new();
    for &fabric in fabrics {
        for &scheduler in schedulers {
            let b = ExperimentConfig {
                fabric,
                scheduler,
                ..base.clone()
            };
            for mut cfg in sweep_points(&b, rates) {
                if let (Scenario::Trace, Some(t)) = (cfg.scenario, cfg.trace.as_mut()) {
                    t.augment_percent = Some(cfg.rate_percent);
                }
                out.push(cfg);
            }
        }
    }
    out
}

/// The four latency-table points for one scheduler.
pub fn table1_points(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for scenario in [Scenario::Fixed, Scenario::Random] {
        for rate_percent in [70.0, 95.0] {
            out.push(ExperimentConfig {
                scenario,
                rate_percent,
                trace: None,
                ..base.clone()
            });
        }
    }
    out
}

/// Validates and runs every point in parallel, keeping the input order.
pub fn run_points(points: &[ExperimentConfig]) -> Result<Vec<RunReport>> {
    for cfg in points {
        cfg.validate()?;
        check_capture(cfg)?;
    }
    points
        .par_iter()
        .map(|cfg| {
            log::info!(
                "{} {} {} @ {}%",
                cfg.scenario,
                cfg.fabric,
                cfg.scheduler,
                cfg.rate_percent
            );
            run(cfg).map_err(CliError::from)
        })
        .collect()
}

/// One line of `results.csv`: every scalar field of a [`RunReport`], in
/// report order. The drop matrix goes to `drops.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
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
    pub processing_floor_cycles: Option<f64>,
    pub drop_count: u64,
    pub drop_rate_percent: f64,
    pub partial: bool,
}

impl From<&RunReport> for ResultRow {
    fn from(r: &RunReport) -> Self {
        ResultRow {
            scenario: r.scenario,
            scheduler: r.scheduler,
            fabric: r.fabric,
            rate_percent: r.rate_percent,
            seed: r.seed,
            clock_hz: r.clock_hz,
            injected: r.injected,
            delivered: r.delivered,
            queue_drops: r.queue_drops,
            policy_drops: r.policy_drops,
            in_flight: r.in_flight,
            unclassified: r.unclassified,
            cycles: r.cycles,
            offered_percent: r.offered_percent,
            throughput_percent: r.throughput_percent,
            throughput_gbps: r.throughput_gbps,
            latency_samples: r.latency_samples,
            latency_mean_cycles: r.latency_mean_cycles,
            latency_min_cycles: r.latency_min_cycles,
            latency_max_cycles: r.latency_max_cycles,
            latency_mean_us: r.latency_mean_us,
            latency_min_us: r.latency_min_us,
            latency_max_us: r.latency_max_us,
            processing_floor_cycles: r.processing_floor_cycles,
            drop_count: r.drop_count,
            drop_rate_percent: r.drop_rate_percent,
            partial: r.partial,
        }
    }
}

#[derive(Debug, Serialize)]
struct DropRow {
    scenario: Scenario,
    scheduler: SchedulerKind,
    fabric: FabricKind,
    rate_percent: f64,
    seed: u64,
    input: usize,
    output: usize,
    drops: u64,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::output(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| CliError::output(path, e))?;
    }
    w.flush().map_err(|e| CliError::output(path, e))
}

/// Fixed-width table of the headline numbers.
pub fn summary(reports: &[RunReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:<5} {:<5} {:>6} {:>8} {:>8} {:>8} {:>9} {:>6} {:>6}",
        "scenario", "sched", "fabric", "rate", "offered", "thruput", "drop%", "mean", "min", "max"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<8} {:<5} {:<5} {:>6.1} {:>8.2} {:>8.2} {:>8.3} {:>9.1} {:>6} {:>6}{}",
            r.scenario.label(),
            r.scheduler.label(),
            r.fabric.label(),
            r.rate_percent,
            r.offered_percent,
            r.throughput_percent,
            r.drop_rate_percent,
            r.latency_mean_cycles,
            r.latency_min_cycles,
            r.latency_max_cycles,
            if r.partial { "  partial" } else { "" },
        );
    }
    s.push_str("latencies in clock cycles; rates in percent of the datapath bandwidth\n");
    s
}

/// Writes the four output files into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, reports: &[RunReport]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
    write_csv(
        &dir.join("results.csv"),
        reports.iter().map(ResultRow::from),
    )?;
    let drops = reports.iter().flat_map(|r| {
        r.drop_matrix
            .iter()
            .enumerate()
            .flat_map(move |(input, row)| {
                row.iter().enumerate().map(move |(output, &drops)| DropRow {
                    scenario: r.scenario,
                    scheduler: r.scheduler,
                    fabric: r.fabric,
                    rate_percent: r.rate_percent,
                    seed: r.seed,
                    input,
                    output,
                    drops,
                })
            })
    });
    write_csv(&dir.join("drops.csv"), drops)?;
    let json_path = dir.join("results.json");
    let json =
        serde_json::to_string_pretty(reports).map_err(|e| CliError::output(&json_path, e))?;
    fs::write(&json_path, json).map_err(|e| CliError::output(&json_path, e))?;
    let summary_path = dir.join("summary.txt");
    fs::write(&summary_path, summary(reports)).map_err(|e| CliError::output(&summary_path, e))?;
    Ok(())
}

/// Runs a parsed command line, printing the summary to stdout.
pub fn execute(cli: Cli) -> Result<()> {
    let (points, out) = match cli.command {
        Command::Run {
            point,
            rate,
            scheduler,
            fabric,
        } => {
            let mut cfg = point.base_config()?;
            if let Some(r) = rate {
                cfg.rate_percent = r;
            }
            cfg.scheduler = scheduler.unwrap_or(cfg.scheduler);
            cfg.fabric = fabric.unwrap_or(cfg.fabric);
            (vec![cfg], point.out)
        }
        Command::Sweep {
            point,
            rates,
            schedulers,
            fabrics,
        } => {
            let base = point.base_config()?;
            (sweep_grid(&base, &rates, &schedulers, &fabrics), point.out)
        }
        Command::Table1 { point, scheduler } => {
            let mut base = point.base_config()?;
            base.scheduler = scheduler.unwrap_or(base.scheduler);
            (table1_points(&base), point.out)
        }
        Command::GenTrace {
            out,
            packets,
            load,
            clock_mhz,
            seed,
        } => {
            if !(load > 0.0 && load < 100.0) {
                return Err(
                    xqsim::Error::Config(format!("--load {load} is outside (0, 100)")).into(),
                );
            }
            let sample = SampleTrace {
                packets,
                load_percent: load,
                clock_hz: clock_mhz * 1e6,
                seed,
            };
            sample.write(&out)?;
            println!("wrote {packets} packets to {}", out.display());
            return Ok(());
        }
    };
    let reports = run_points(&points)?;
    write_outputs(&out, &reports)?;
    print!("{}", summary(&reports));
    println!("results in {}", out.display());
    Ok(())
}
