//! Capture ingestion: pcap/pcapng reading, bidirectional flow assembly, and
//! the per-capture passive DNS map.
//!
//! Packet sizes throughout this crate mean transport payload length (TCP/UDP
//! payload, not frame length). Zero-payload packets (pure ACKs, bare FINs) are
//! tracked for flow state but excluded from the per-flow packet series when
//! [`AssemblyConfig::payload_only`] is set, which is the default.

mod assemble;
mod dns;
mod link;
mod pcapfile;

pub use dns::{parse_dns_message, DnsAnswer, DnsMap, DnsMessage, DnsRecordData};

use std::fmt;
use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("cannot read capture {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a pcap or pcapng file: {0}")]
    BadFormat(String),
    #[error("capture parse error in {path}: {detail}")]
    Parse { path: String, detail: String },
}

/// Transport protocol of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Tcp,
    Udp,
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transport::Tcp => write!(f, "tcp"),
            Transport::Udp => write!(f, "udp"),
        }
    }
}

/// Packet direction relative to the flow initiator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Initiator → responder (upstream, outgoing).
    Up,
    /// Responder → initiator (downstream, incoming).
    Down,
}

/// One side of a transport conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub ip: IpAddr,
    pub port: u16,
}

impl Endpoint {
    pub fn new(ip: IpAddr, port: u16) -> Self {
        Endpoint { ip, port }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.ip, self.port)
    }
}

/// Canonicalized 5-tuple. `src` is the flow initiator: for TCP the sender of
/// the first SYN (the receiver when the capture starts at the SYN-ACK),
/// otherwise the sender of the first observed packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub transport: Transport,
}

/// One packet inside an assembled flow. Endpoints are implied by the flow key
/// and `direction`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PacketRecord {
    /// Capture timestamp in seconds (microsecond precision or better).
    pub timestamp: f64,
    pub direction: Direction,
    /// Transport payload bytes. Length is the packet size used everywhere.
    pub payload: Vec<u8>,
    /// TCP sequence number, used to reorder segments for payload parsing.
    pub tcp_seq: Option<u32>,
}

impl PacketRecord {
    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }
}

/// An assembled bidirectional transport conversation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Flow {
    pub key: FlowKey,
    /// Packet series in capture order (payload-bearing only under the default
    /// payload-only assembly).
    pub packets: Vec<PacketRecord>,
    pub first_ts: f64,
    pub last_ts: f64,
    pub up_bytes: u64,
    pub down_bytes: u64,
    /// FP_up: recorded upstream packet count.
    pub up_packets: u32,
    /// FP_down: recorded downstream packet count.
    pub down_packets: u32,
}

impl Flow {
    /// FP_all = FP_up + FP_down.
    pub fn fp_all(&self) -> u32 {
        self.up_packets + self.down_packets
    }

    pub fn fp(&self, dir: Direction) -> u32 {
        match dir {
            Direction::Up => self.up_packets,
            Direction::Down => self.down_packets,
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.up_bytes + self.down_bytes
    }

    /// Iterate packets of one direction in capture order.
    pub fn packets_in(&self, dir: Direction) -> impl Iterator<Item = &PacketRecord> {
        self.packets.iter().filter(move |p| p.direction == dir)
    }

    /// Concatenated payload of one direction, capped at `cap` bytes. TCP
    /// segments are reordered by sequence number so protocol parsers see byte
    /// order even when the wire order was shuffled; the packet series itself
    /// keeps capture order for timing features.
    pub fn payload_stream(&self, dir: Direction, cap: usize) -> Vec<u8> {
        let mut segs: Vec<(&PacketRecord, usize)> = self
            .packets_in(dir)
            .enumerate()
            .map(|(i, p)| (p, i))
            .collect();
        if self.key.transport == Transport::Tcp && segs.iter().all(|(p, _)| p.tcp_seq.is_some()) {
            segs.sort_by_key(|(p, i)| (p.tcp_seq.unwrap_or(0), *i));
        }
        let mut out = Vec::new();
        for (p, _) in segs {
            if out.len() >= cap {
                break;
            }
            let room = cap - out.len();
            let take = p.payload.len().min(room);
            out.extend_from_slice(&p.payload[..take]);
        }
        out
    }

    /// First payload of one direction (after TCP reordering), if any.
    pub fn first_payload(&self, dir: Direction, cap: usize) -> Option<Vec<u8>> {
        if self.packets_in(dir).next().is_none() {
            return None;
        }
        Some(self.payload_stream(dir, cap))
    }
}

/// Flow assembly settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssemblyConfig {
    /// Conversations idle longer than this are split into separate flows.
    pub idle_timeout: f64,
    /// Exclude zero-payload packets from the packet series.
    pub payload_only: bool,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        AssemblyConfig {
            idle_timeout: 300.0,
            payload_only: true,
        }
    }
}

/// Soft-error counters accumulated during ingestion.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestCounters {
    /// Frames handed to the decoder.
    pub frames: u64,
    /// Frames skipped because the captured bytes were shorter than the
    /// headers claimed.
    pub truncated: u64,
    /// Frames without an IPv4/IPv6 payload (ARP, LLDP, unknown link types).
    pub non_ip: u64,
    /// IP packets without a parseable TCP/UDP header (other protocols,
    /// trailing fragments).
    pub non_transport: u64,
    /// DNS responses absorbed into the map.
    pub dns_responses: u64,
    /// Packets whose timestamp ran backwards and was clamped.
    pub clock_skew: u64,
}

/// Result of ingesting one capture file.
#[derive(Debug, Clone)]
pub struct Ingest {
    pub flows: Vec<Flow>,
    pub dns: DnsMap,
    pub counters: IngestCounters,
}

/// Read a pcap or pcapng file and assemble its packets into flows, building
/// the DNS map from responses found in the same capture.
///
/// Every packet with a TCP/UDP header lands in exactly one flow; truncated
/// and non-IP frames are skipped and counted, never fatal. Flows come back
/// sorted by (first timestamp, key), so ingesting the same file twice yields
/// an identical flow list.
pub fn ingest_capture(path: &Path, cfg: &AssemblyConfig) -> Result<Ingest, CaptureError> {
    let mut asm = assemble::Assembler::new(cfg.clone());
    let mut dns = DnsMap::default();
    let mut counters = IngestCounters::default();

    pcapfile::for_each_frame(path, |frame| {
        counters.frames += 1;
        match link::parse_frame(frame.linktype, frame.data) {
            link::FrameResult::Packet(pkt) => {
                if pkt.transport == Transport::Udp
                    && (pkt.src.port == 53 || pkt.dst.port == 53)
                    && !pkt.payload.is_empty()
                {
                    if dns.absorb_response(&pkt.payload, frame.ts) {
                        counters.dns_responses += 1;
                    }
                }
                asm.push(frame.ts, &pkt, &mut counters);
            }
            link::FrameResult::NonIp => counters.non_ip += 1,
            link::FrameResult::NonTransport => counters.non_transport += 1,
            link::FrameResult::Truncated => counters.truncated += 1,
        }
    })?;

    let mut flows = asm.finish();
    flows.sort_by(|a, b| {
        a.first_ts
            .total_cmp(&b.first_ts)
            .then_with(|| a.key.cmp(&b.key))
    });
    Ok(Ingest {
        flows,
        dns,
        counters,
    })
}

/// Flat per-flow record for JSONL export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowSummary {
    pub flow_id: u64,
    pub src_ip: IpAddr,
    pub src_port: u16,
    pub dst_ip: IpAddr,
    pub dst_port: u16,
    pub transport: Transport,
    pub first_ts: f64,
    pub last_ts: f64,
    pub up_packets: u32,
    pub down_packets: u32,
    pub up_bytes: u64,
    pub down_bytes: u64,
}

impl FlowSummary {
    pub fn of(flow_id: u64, flow: &Flow) -> Self {
        FlowSummary {
            flow_id,
            src_ip: flow.key.src.ip,
            src_port: flow.key.src.port,
            dst_ip: flow.key.dst.ip,
            dst_port: flow.key.dst.port,
            transport: flow.key.transport,
            first_ts: flow.first_ts,
            last_ts: flow.last_ts,
            up_packets: flow.up_packets,
            down_packets: flow.down_packets,
            up_bytes: flow.up_bytes,
            down_bytes: flow.down_bytes,
        }
    }
}
