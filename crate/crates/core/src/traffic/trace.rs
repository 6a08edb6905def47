// SPDX-License-Identifier: Apache-2.0

//! Replay of classic pcap captures, optionally topped up with synthetic
//! packets to reach a target load.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use etherparse::{
    EtherType, Ethernet2Header, LaxNetSlice, LaxSlicedPacket, PacketBuilder, TransportSlice,
};
use pcap_parser::{
    parse_pcap_frame, parse_pcap_frame_be, parse_pcap_header, LegacyPcapBlock, Linktype,
    PcapHeader, ToVec,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use super::generator::{mean_flits, mean_gap, random_headers, random_order_flow, FRAME_SIZES};
use super::PacketSource;
use crate::kernel::{flit_count, Cycle, MIN_FRAME_BYTES};
use crate::model::{Headers, Packet};
use crate::{Error, Result};

const MAX_FRAME_BYTES: u32 = 1518;

/// Unused insertion budget saturates at this many datapath words.
const CREDIT_CAP: f64 = 96.0;

/// How trace packets are mapped to task sequences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSequences {
    /// Fixed flows selected by `dst_port % flows`.
    #[default]
    Modulo,
    /// A random ordering of all engines per packet.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    pub pcap: PathBuf,
    /// Target load in percent; `None` replays the capture as is.
    #[serde(default)]
    pub augment_percent: Option<f64>,
    #[serde(default)]
    pub sequences: TraceSequences,
}

/// One record of a capture file.
#[derive(Debug, Clone, PartialEq)]
pub struct CapturedPacket {
    /// Capture timestamp in nanoseconds.
    pub ts_ns: u64,
    pub caplen: u32,
    pub headers: Headers,
}

impl CapturedPacket {
    /// Frame size used for simulation: the capture length, clamped to a
    /// legal Ethernet frame.
    pub fn frame_bytes(&self) -> u32 {
        self.caplen.clamp(MIN_FRAME_BYTES as u32, MAX_FRAME_BYTES)
    }
}

fn pcap_error(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Pcap {
        path: path.to_path_buf(),
        offset,
        msg: msg.into(),
    }
}

fn decode_headers(linktype: Linktype, data: &[u8]) -> Headers {
    let sliced = match linktype {
        Linktype::ETHERNET => LaxSlicedPacket::from_ethernet(data).ok(),
        Linktype::RAW | Linktype::IPV4 => LaxSlicedPacket::from_ip(data).ok(),
        _ => None,
    };
    let mut h = Headers {
        ipv4: false,
        ..Headers::default()
    };
    let Some(sliced) = sliced else { return h };
    if let Some(LaxNetSlice::Ipv4(ip)) = &sliced.net {
        let hdr = ip.header();
        h.ipv4 = true;
        h.src_ip = hdr.source_addr();
        h.dst_ip = hdr.destination_addr();
        h.ip_proto = hdr.protocol().0;
        h.tos = (hdr.dcp().value() << 2) | hdr.ecn().value();
    }
    match &sliced.transport {
        Some(TransportSlice::Udp(u)) => {
            h.src_port = u.source_port();
            h.dst_port = u.destination_port();
        }
        Some(TransportSlice::Tcp(t)) => {
            h.src_port = t.source_port();
            h.dst_port = t.destination_port();
        }
        _ => {}
    }
    h
}

/// Parses a classic pcap image. Records are returned sorted by timestamp.
pub fn parse_pcap(data: &[u8], path: &Path) -> Result<Vec<CapturedPacket>> {
    let (mut rest, header) =
        parse_pcap_header(data).map_err(|_| pcap_error(path, 0, "not a classic pcap file"))?;
    if header.is_modified_format() {
        return Err(pcap_error(path, 0, "modified pcap format is not supported"));
    }
    let frac_ns: u64 = if header.is_nanosecond_precision() {
        1
    } else {
        1000
    };
    let mut out = Vec::new();
    while !rest.is_empty() {
        let offset = data.len() - rest.len();
        let parsed = if header.is_bigendian() {
            parse_pcap_frame_be(rest)
        } else {
            parse_pcap_frame(rest)
        };
        let (next, block) = parsed.map_err(|e| {
            let what = match e {
                pcap_parser::nom::Err::Incomplete(_) => "truncated record".to_string(),
                other => format!("corrupt record: {other:?}"),
            };
            pcap_error(path, offset, what)
        })?;
        out.push(CapturedPacket {
            ts_ns: u64::from(block.ts_sec) * 1_000_000_000 + u64::from(block.ts_usec) * frac_ns,
            caplen: block.caplen,
            headers: decode_headers(header.network, block.data),
        });
        rest = next;
    }
    if out.windows(2).any(|w| w[1].ts_ns < w[0].ts_ns) {
        log::warn!("{}: timestamps are not monotonic, sorting", path.display());
        out.sort_by_key(|p| p.ts_ns);
    }
    Ok(out)
}

pub fn read_pcap(path: &Path) -> Result<Vec<CapturedPacket>> {
    let data = std::fs::read(path)?;
    parse_pcap(&data, path)
}

/// Writes an Ethernet pcap. Timestamps are in nanoseconds; `nanos` selects
/// the nanosecond-resolution variant, otherwise they are truncated to
/// microseconds.
pub fn write_pcap(path: &Path, frames: &[(u64, Vec<u8>)], nanos: bool) -> Result<()> {
    let mut header = PcapHeader::new();
    header.network = Linktype::ETHERNET;
    header.snaplen = 65535;
    if nanos {
        header.magic_number = 0xa1b2_3c4d;
    }
    let mut out = header
        .to_vec_raw()
        .map_err(|e| pcap_error(path, 0, format!("{e:?}")))?;
    for (ts, data) in frames {
        let (sec, frac) = (ts / 1_000_000_000, ts % 1_000_000_000);
        let block = LegacyPcapBlock {
            ts_sec: sec as u32,
            ts_usec: if nanos { frac } else { frac / 1000 } as u32,
            caplen: data.len() as u32,
            origlen: data.len() as u32,
            data,
        };
        let record = block
            .to_vec_raw()
            .map_err(|e| pcap_error(path, out.len(), format!("{e:?}")))?;
        out.extend(record);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parameters of a synthetic capture used for tests and demos.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    pub packets: usize,
    /// Load at `clock_hz`, in percent of the datapath.
    pub load_percent: f64,
    pub clock_hz: f64,
    pub seed: u64,
}

impl Default for SampleTrace {
    fn default() -> Self {
        SampleTrace {
            packets: 1000,
            load_percent: 45.0,
            clock_hz: 20e6,
            seed: 2019,
        }
    }
}

impl SampleTrace {
    /// Frames with nanosecond timestamps aligned to the clock. Roughly one
    /// frame in a hundred is ARP.
    pub fn frames(&self) -> Vec<(u64, Vec<u8>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let gap = mean_gap(self.load_percent, mean_flits(&FRAME_SIZES));
        let geo = Geometric::new(1.0 / (1.0 + gap)).expect("load in (0, 100)");
        let ns_per_cycle = 1e9 / self.clock_hz;
        let ports = [53u16, 80, 443, 8080, 123, 22, 25, 3306];
        let mut cycle = 0u64;
        let mut out = Vec::with_capacity(self.packets);
        for _ in 0..self.packets {
            let size = *FRAME_SIZES.choose(&mut rng).expect("non-empty");
            let frame = if rng.random_ratio(1, 100) {
                let mut f = Vec::with_capacity(64);
                Ethernet2Header {
                    source: [2, 0, 0, 0, 0, 1],
                    destination: [0xff; 6],
                    ether_type: EtherType::ARP,
                }
                .write(&mut f)
                .expect("vec write");
                f.resize(64, 0);
                f
            } else {
                let h = random_headers(&mut rng);
                let dst_port = if rng.random_bool(0.5) {
                    *ports.choose(&mut rng).expect("non-empty")
                } else {
                    h.dst_port
                };
                let builder = PacketBuilder::ethernet2([2, 0, 0, 0, 0, 1], [2, 0, 0, 0, 0, 2])
                    .ipv4(h.src_ip.octets(), h.dst_ip.octets(), 64)
                    .udp(h.src_port, dst_port);
                // Four trailing bytes stand in for the FCS.
                let payload = vec![0u8; size as usize - builder.size(0) - 4];
                let mut f = Vec::with_capacity(size as usize);
                builder.write(&mut f, &payload).expect("vec write");
                f.resize(size as usize, 0);
                f
            };
            let words = flit_count(frame.len().max(MIN_FRAME_BYTES)).expect("legal frame");
            out.push(((cycle as f64 * ns_per_cycle).round() as u64, frame));
            cycle += words as u64 + geo.sample(&mut rng);
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_pcap(path, &self.frames(), true)
    }
}

/// Converts a capture timestamp offset to cycles, exactly for integral
/// clock frequencies.
pub fn ns_to_cycles(ns: u64, clock_hz: f64) -> u64 {
    if clock_hz.fract() == 0.0 {
        (u128::from(ns) * clock_hz as u128 / 1_000_000_000) as u64
    } else {
        (ns as f64 * clock_hz / 1e9).floor() as u64
    }
}

/// Injects captured packets at their timestamps and fills idle time with
/// synthetic packets up to the augmentation target.
pub struct TraceSource {
    captured: VecDeque<(Cycle, CapturedPacket)>,
    sequences: TraceSequences,
    rng: ChaCha8Rng,
    /// Additional load to insert, as words per cycle.
    extra: f64,
    credit: f64,
    clock: Cycle,
    native_percent: f64,
    next_id: u64,
    inserted: u64,
}

impl TraceSource {
    pub fn new(
        packets: Vec<CapturedPacket>,
        clock_hz: f64,
        augment_percent: Option<f64>,
        sequences: TraceSequences,
        seed: u64,
    ) -> Result<Self> {
        if let Some(a) = augment_percent {
            if !(a > 0.0 && a <= 100.0) {
                return Err(Error::Config(format!(
                    "augment target {a}% is outside (0, 100]"
                )));
            }
        }
        let t0 = packets.first().map_or(0, |p| p.ts_ns);
        let captured: VecDeque<(Cycle, CapturedPacket)> = packets
            .into_iter()
            .map(|p| (Cycle(ns_to_cycles(p.ts_ns - t0, clock_hz)), p))
            .collect();
        let words: u64 = captured
            .iter()
            .map(|(_, p)| flit_count(p.frame_bytes() as usize).unwrap_or(1) as u64)
            .sum();
        let span = captured.back().map_or(0, |(c, p)| {
            c.0 + flit_count(p.frame_bytes() as usize).unwrap_or(1) as u64
        });
        let native_percent = if span > 0 {
            100.0 * words as f64 / span as f64
        } else {
            0.0
        };
        let extra = augment_percent.map_or(0.0, |a| ((a - native_percent) / 100.0).max(0.0));
        Ok(TraceSource {
            captured,
            sequences,
            rng: ChaCha8Rng::seed_from_u64(seed),
            extra,
            credit: 0.0,
            clock: Cycle::ZERO,
            native_percent,
            next_id: 0,
            inserted: 0,
        })
    }

    /// Load of the capture alone, in percent of the datapath.
    pub fn native_load_percent(&self) -> f64 {
        self.native_percent
    }

    /// Injection cycle of every captured packet still queued.
    pub fn schedule(&self) -> Vec<Cycle> {
        self.captured.iter().map(|(c, _)| *c).collect()
    }

    /// Synthetic packets inserted so far.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    fn tag(&mut self, mut pkt: Packet) -> Packet {
        if self.sequences == TraceSequences::Random && pkt.headers.ipv4 {
            pkt.flow_hint = Some(random_order_flow(&mut self.rng));
        }
        pkt
    }

    /// Inserts a synthetic packet that fits before the next captured one,
    /// once enough credit has accrued. Sizes are drawn uniformly among the
    /// frame sizes that fit.
    fn try_insert(&mut self, free_at: Cycle) -> Option<(Cycle, Packet)> {
        let deadline = self.captured.front()?.0;
        let mut sizes: Vec<(u32, u64)> = FRAME_SIZES
            .iter()
            .map(|&s| (s, flit_count(s as usize).expect("legal size") as u64))
            .collect();
        sizes.shuffle(&mut self.rng);
        let (size, words, start) = sizes.into_iter().find_map(|(size, words)| {
            let short = words as f64 - self.credit;
            let wait = if short <= 0.0 {
                0
            } else {
                (short / self.extra).ceil() as u64
            };
            let start = free_at + wait;
            (start.0 + words <= deadline.0).then_some((size, words, start))
        })?;
        self.credit += self.extra * (start - free_at) as f64 - words as f64;
        self.clock = start;
        let headers = random_headers(&mut self.rng);
        let pkt = Packet::new(self.next_id, size, headers);
        self.inserted += 1;
        Some((start, pkt))
    }
}

impl PacketSource for TraceSource {
    fn next_packet(&mut self, free_at: Cycle) -> Option<(Cycle, Packet)> {
        if self.extra > 0.0 && free_at > self.clock {
            let elapsed = free_at - self.clock;
            self.credit = (self.credit + self.extra * elapsed as f64).min(CREDIT_CAP);
            self.clock = free_at;
        }
        if self.extra > 0.0 {
            if let Some((at, pkt)) = self.try_insert(free_at) {
                self.next_id += 1;
                return Some((at, self.tag(pkt)));
            }
        }
        let (at, cap) = self.captured.pop_front()?;
        let pkt = Packet::new(self.next_id, cap.frame_bytes(), cap.headers);
        self.next_id += 1;
        Some((at.max(free_at), self.tag(pkt)))
    }
}
