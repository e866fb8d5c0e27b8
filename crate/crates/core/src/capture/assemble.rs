//! Bidirectional flow assembly: orient conversations around the initiator,
//! split on idle gaps, keep per-direction byte and packet totals consistent
//! with the recorded packet series.

use std::collections::HashMap;

use super::link::ParsedPacket;
use super::{
    AssemblyConfig, Direction, Endpoint, Flow, FlowKey, IngestCounters, PacketRecord, Transport,
};

/// Unordered conversation key: both orientations of a 5-tuple land here.
#[derive(PartialEq, Eq, Hash, Clone, Copy)]
struct ConvKey {
    lo: Endpoint,
    hi: Endpoint,
    transport: Transport,
}

impl ConvKey {
    fn of(a: Endpoint, b: Endpoint, transport: Transport) -> Self {
        if a <= b {
            ConvKey {
                lo: a,
                hi: b,
                transport,
            }
        } else {
            ConvKey {
                lo: b,
                hi: a,
                transport,
            }
        }
    }
}

struct FlowState {
    key: FlowKey,
    packets: Vec<PacketRecord>,
    first_ts: f64,
    last_ts: f64,
    up_bytes: u64,
    down_bytes: u64,
    up_packets: u32,
    down_packets: u32,
}

impl FlowState {
    /// Orientation from the first observed packet: SYN sender initiates, a
    /// SYN-ACK means the capture started one step in and its receiver
    /// initiated, anything else falls back to the sender.
    fn open(ts: f64, pkt: &ParsedPacket) -> Self {
        let key = if pkt.syn_ack() {
            FlowKey {
                src: pkt.dst,
                dst: pkt.src,
                transport: pkt.transport,
            }
        } else {
            FlowKey {
                src: pkt.src,
                dst: pkt.dst,
                transport: pkt.transport,
            }
        };
        FlowState {
            key,
            packets: Vec::new(),
            first_ts: ts,
            last_ts: ts,
            up_bytes: 0,
            down_bytes: 0,
            up_packets: 0,
            down_packets: 0,
        }
    }

    fn absorb(&mut self, ts: f64, pkt: &ParsedPacket, payload_only: bool) {
        self.last_ts = self.last_ts.max(ts);
        if payload_only && pkt.payload.is_empty() {
            return;
        }
        let direction = if pkt.src == self.key.src {
            Direction::Up
        } else {
            Direction::Down
        };
        match direction {
            Direction::Up => {
                self.up_bytes += pkt.payload.len() as u64;
                self.up_packets += 1;
            }
            Direction::Down => {
                self.down_bytes += pkt.payload.len() as u64;
                self.down_packets += 1;
            }
        }
        self.packets.push(PacketRecord {
            timestamp: ts,
            direction,
            payload: pkt.payload.clone(),
            tcp_seq: pkt.tcp_seq,
        });
    }

    fn close(self) -> Flow {
        Flow {
            key: self.key,
            packets: self.packets,
            first_ts: self.first_ts,
            last_ts: self.last_ts,
            up_bytes: self.up_bytes,
            down_bytes: self.down_bytes,
            up_packets: self.up_packets,
            down_packets: self.down_packets,
        }
    }
}

pub(super) struct Assembler {
    cfg: AssemblyConfig,
    live: HashMap<ConvKey, FlowState>,
    done: Vec<Flow>,
}

impl Assembler {
    pub fn new(cfg: AssemblyConfig) -> Self {
        Assembler {
            cfg,
            live: HashMap::new(),
            done: Vec::new(),
        }
    }

    pub fn push(&mut self, ts: f64, pkt: &ParsedPacket, counters: &mut IngestCounters) {
        let conv = ConvKey::of(pkt.src, pkt.dst, pkt.transport);

        // Idle gaps end the current flow; the next packet opens a fresh one
        // whose orientation is derived from scratch.
        if let Some(state) = self.live.get(&conv) {
            if ts - state.last_ts > self.cfg.idle_timeout {
                let state = self.live.remove(&conv).unwrap();
                self.done.push(state.close());
            }
        }

        match self.live.get_mut(&conv) {
            Some(state) => {
                // Timestamps never run backwards inside a flow; clamp and
                // count instead of reordering.
                let ts = if ts < state.last_ts {
                    counters.clock_skew += 1;
                    state.last_ts
                } else {
                    ts
                };
                state.absorb(ts, pkt, self.cfg.payload_only);
            }
            None => {
                let mut state = FlowState::open(ts, pkt);
                state.absorb(ts, pkt, self.cfg.payload_only);
                self.live.insert(conv, state);
            }
        }
    }

    pub fn finish(mut self) -> Vec<Flow> {
        self.done.extend(self.live.into_values().map(FlowState::close));
        self.done
    }
}
