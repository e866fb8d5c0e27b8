//! Wire-format builders: Ethernet/IP/TCP/UDP frames, DNS response payloads,
//! legacy pcap and pcapng writers, and scripted conversations with a byte
//! ledger for oracle checks.
//!
//! IPv4 header checksums are real; TCP/UDP checksums are left zero since the
//! ingest path never verifies them.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::IpAddr;
use std::path::Path;

use crate::capture::{Direction, Endpoint, Transport};

pub const FLAG_FIN: u8 = 0x01;
pub const FLAG_SYN: u8 = 0x02;
pub const FLAG_RST: u8 = 0x04;
pub const FLAG_PSH: u8 = 0x08;
pub const FLAG_ACK: u8 = 0x10;

/// One link-layer frame ready to be written to a capture file.
#[derive(Debug, Clone)]
pub struct Frame {
    pub ts: f64,
    pub data: Vec<u8>,
}

/// Flatten frame lists from several scripts into capture order.
pub fn interleave(scripts: Vec<Vec<Frame>>) -> Vec<Frame> {
    let mut all: Vec<Frame> = scripts.into_iter().flatten().collect();
    all.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    all
}

/// Expected per-flow totals under payload-only assembly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ledger {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub transport: Transport,
    pub up_bytes: u64,
    pub down_bytes: u64,
    pub up_packets: u32,
    pub down_packets: u32,
}

// ---------------------------------------------------------------- writers

const PCAP_MAGIC_USEC: u32 = 0xa1b2_c3d4;
const PCAP_MAGIC_NSEC: u32 = 0xa1b2_3c4d;

fn write_pcap_with(path: &Path, frames: &[Frame], magic: u32, frac: f64) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&magic.to_le_bytes())?;
    w.write_all(&2u16.to_le_bytes())?;
    w.write_all(&4u16.to_le_bytes())?;
    w.write_all(&0i32.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    w.write_all(&65535u32.to_le_bytes())?;
    w.write_all(&1u32.to_le_bytes())?;
    for f in frames {
        let sec = f.ts.floor() as u32;
        let sub = ((f.ts - f.ts.floor()) * frac).round() as u32;
        w.write_all(&sec.to_le_bytes())?;
        w.write_all(&sub.to_le_bytes())?;
        w.write_all(&(f.data.len() as u32).to_le_bytes())?;
        w.write_all(&(f.data.len() as u32).to_le_bytes())?;
        w.write_all(&f.data)?;
    }
    w.flush()
}

/// Write a legacy pcap file (Ethernet link type, microsecond timestamps).
pub fn write_pcap(path: &Path, frames: &[Frame]) -> io::Result<()> {
    write_pcap_with(path, frames, PCAP_MAGIC_USEC, 1e6)
}

/// Legacy pcap with nanosecond timestamp magic.
pub fn write_pcap_nanos(path: &Path, frames: &[Frame]) -> io::Result<()> {
    write_pcap_with(path, frames, PCAP_MAGIC_NSEC, 1e9)
}

/// Write a pcapng file: one section, one Ethernet interface with an explicit
/// microsecond tsresol option, one enhanced packet block per frame.
pub fn write_pcapng(path: &Path, frames: &[Frame]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);

    // Section header block.
    let shb: &mut Vec<u8> = &mut Vec::new();
    shb.extend_from_slice(&0x0a0d_0d0au32.to_le_bytes());
    shb.extend_from_slice(&28u32.to_le_bytes());
    shb.extend_from_slice(&0x1a2b_3c4du32.to_le_bytes());
    shb.extend_from_slice(&1u16.to_le_bytes());
    shb.extend_from_slice(&0u16.to_le_bytes());
    shb.extend_from_slice(&u64::MAX.to_le_bytes());
    shb.extend_from_slice(&28u32.to_le_bytes());
    w.write_all(shb)?;

    // Interface description block with if_tsresol = 6 (microseconds).
    let idb: &mut Vec<u8> = &mut Vec::new();
    idb.extend_from_slice(&0x0000_0001u32.to_le_bytes());
    idb.extend_from_slice(&32u32.to_le_bytes());
    idb.extend_from_slice(&1u16.to_le_bytes()); // linktype Ethernet
    idb.extend_from_slice(&0u16.to_le_bytes());
    idb.extend_from_slice(&65535u32.to_le_bytes());
    idb.extend_from_slice(&9u16.to_le_bytes()); // if_tsresol
    idb.extend_from_slice(&1u16.to_le_bytes());
    idb.extend_from_slice(&[6, 0, 0, 0]);
    idb.extend_from_slice(&0u16.to_le_bytes()); // opt_endofopt
    idb.extend_from_slice(&0u16.to_le_bytes());
    idb.extend_from_slice(&32u32.to_le_bytes());
    w.write_all(idb)?;

    for f in frames {
        let units = (f.ts * 1e6).round() as u64;
        let pad = (4 - f.data.len() % 4) % 4;
        let total = 32 + f.data.len() + pad;
        let mut epb: Vec<u8> = Vec::with_capacity(total);
        epb.extend_from_slice(&0x0000_0006u32.to_le_bytes());
        epb.extend_from_slice(&(total as u32).to_le_bytes());
        epb.extend_from_slice(&0u32.to_le_bytes()); // interface id
        epb.extend_from_slice(&((units >> 32) as u32).to_le_bytes());
        epb.extend_from_slice(&(units as u32).to_le_bytes());
        epb.extend_from_slice(&(f.data.len() as u32).to_le_bytes());
        epb.extend_from_slice(&(f.data.len() as u32).to_le_bytes());
        epb.extend_from_slice(&f.data);
        epb.extend_from_slice(&vec![0u8; pad]);
        epb.extend_from_slice(&(total as u32).to_le_bytes());
        w.write_all(&epb)?;
    }
    w.flush()
}

// --------------------------------------------------------- frame builders

/// Wrap a payload in an Ethernet II header.
pub fn ethernet_frame(ethertype: u16, payload: &[u8]) -> Vec<u8> {
    let mut f = Vec::with_capacity(14 + payload.len());
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]);
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]);
    f.extend_from_slice(&ethertype.to_be_bytes());
    f.extend_from_slice(payload);
    f
}

/// An ARP request frame, used to exercise the non-IP counter.
pub fn arp_frame() -> Vec<u8> {
    let mut arp = vec![0u8; 28];
    arp[..8].copy_from_slice(&[0, 1, 8, 0, 6, 4, 0, 1]);
    ethernet_frame(0x0806, &arp)
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum = 0u32;
    for chunk in header.chunks(2) {
        let word = u16::from_be_bytes([chunk[0], *chunk.get(1).unwrap_or(&0)]);
        sum += word as u32;
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

fn ip_packet(src: IpAddr, dst: IpAddr, proto: u8, transport: &[u8]) -> Vec<u8> {
    match (src, dst) {
        (IpAddr::V4(s), IpAddr::V4(d)) => {
            let total = 20 + transport.len();
            let mut h = Vec::with_capacity(total);
            h.push(0x45);
            h.push(0);
            h.extend_from_slice(&(total as u16).to_be_bytes());
            h.extend_from_slice(&[0, 0]); // id
            h.extend_from_slice(&0x4000u16.to_be_bytes()); // DF
            h.push(64);
            h.push(proto);
            h.extend_from_slice(&[0, 0]); // checksum slot
            h.extend_from_slice(&s.octets());
            h.extend_from_slice(&d.octets());
            let sum = ipv4_checksum(&h);
            h[10..12].copy_from_slice(&sum.to_be_bytes());
            h.extend_from_slice(transport);
            h
        }
        (IpAddr::V6(s), IpAddr::V6(d)) => {
            let mut h = Vec::with_capacity(40 + transport.len());
            h.extend_from_slice(&0x6000_0000u32.to_be_bytes());
            h.extend_from_slice(&(transport.len() as u16).to_be_bytes());
            h.push(proto);
            h.push(64);
            h.extend_from_slice(&s.octets());
            h.extend_from_slice(&d.octets());
            h.extend_from_slice(transport);
            h
        }
        _ => panic!("mixed address families in one packet"),
    }
}

fn ethertype_for(ip: IpAddr) -> u16 {
    match ip {
        IpAddr::V4(_) => 0x0800,
        IpAddr::V6(_) => 0x86dd,
    }
}

/// Build a full Ethernet/IP/TCP frame.
pub fn tcp_frame(
    src: Endpoint,
    dst: Endpoint,
    seq: u32,
    ack: u32,
    flags: u8,
    payload: &[u8],
) -> Vec<u8> {
    let mut t = Vec::with_capacity(20 + payload.len());
    t.extend_from_slice(&src.port.to_be_bytes());
    t.extend_from_slice(&dst.port.to_be_bytes());
    t.extend_from_slice(&seq.to_be_bytes());
    t.extend_from_slice(&ack.to_be_bytes());
    t.push(5 << 4);
    t.push(flags);
    t.extend_from_slice(&0xffffu16.to_be_bytes());
    t.extend_from_slice(&[0, 0, 0, 0]); // checksum, urgent
    t.extend_from_slice(payload);
    let ip = ip_packet(src.ip, dst.ip, 6, &t);
    ethernet_frame(ethertype_for(src.ip), &ip)
}

/// Build a full Ethernet/IP/UDP frame.
pub fn udp_frame(src: Endpoint, dst: Endpoint, payload: &[u8]) -> Vec<u8> {
    let mut u = Vec::with_capacity(8 + payload.len());
    u.extend_from_slice(&src.port.to_be_bytes());
    u.extend_from_slice(&dst.port.to_be_bytes());
    u.extend_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
    u.extend_from_slice(&[0, 0]);
    u.extend_from_slice(payload);
    let ip = ip_packet(src.ip, dst.ip, 17, &u);
    ethernet_frame(ethertype_for(src.ip), &ip)
}

// ----------------------------------------------------------- dns payloads

fn encode_dns_name(name: &str, out: &mut Vec<u8>) {
    for label in name.split('.').filter(|l| !l.is_empty()) {
        out.push(label.len() as u8);
        out.extend_from_slice(label.as_bytes());
    }
    out.push(0);
}

/// Build an uncompressed DNS response: one question, then CNAME records in
/// chain order, then address records.
pub fn dns_response(
    txid: u16,
    query: &str,
    cnames: &[(&str, &str)],
    addrs: &[(&str, IpAddr)],
) -> Vec<u8> {
    let mut m = Vec::new();
    m.extend_from_slice(&txid.to_be_bytes());
    m.extend_from_slice(&[0x81, 0x80]); // QR=1, RD, RA
    m.extend_from_slice(&1u16.to_be_bytes());
    m.extend_from_slice(&((cnames.len() + addrs.len()) as u16).to_be_bytes());
    m.extend_from_slice(&[0, 0, 0, 0]);
    encode_dns_name(query, &mut m);
    m.extend_from_slice(&[0, 1, 0, 1]);
    for (owner, target) in cnames {
        encode_dns_name(owner, &mut m);
        m.extend_from_slice(&[0, 5, 0, 1, 0, 0, 0x0e, 0x10]);
        let mut t = Vec::new();
        encode_dns_name(target, &mut t);
        m.extend_from_slice(&(t.len() as u16).to_be_bytes());
        m.extend_from_slice(&t);
    }
    for (owner, ip) in addrs {
        encode_dns_name(owner, &mut m);
        match ip {
            IpAddr::V4(v4) => {
                m.extend_from_slice(&[0, 1, 0, 1, 0, 0, 0x0e, 0x10, 0, 4]);
                m.extend_from_slice(&v4.octets());
            }
            IpAddr::V6(v6) => {
                m.extend_from_slice(&[0, 28, 0, 1, 0, 0, 0x0e, 0x10, 0, 16]);
                m.extend_from_slice(&v6.octets());
            }
        }
    }
    m
}

// --------------------------------------------------------------- scripts

/// Scripted TCP conversation. Sequence numbers are kept coherent so payload
/// reassembly by sequence order matches script order.
pub struct TcpScript {
    src: Endpoint,
    dst: Endpoint,
    t: f64,
    seq_up: u32,
    seq_down: u32,
    frames: Vec<Frame>,
    ledger: Ledger,
}

impl TcpScript {
    /// Open with a SYN / SYN-ACK / ACK handshake (zero-payload packets).
    pub fn handshake(start: f64, src: Endpoint, dst: Endpoint) -> Self {
        let mut s = Self::mid_stream(start, src, dst);
        s.seq_up = 1000;
        s.seq_down = 2000;
        s.push(src, dst, 1000, 0, FLAG_SYN, &[]);
        s.t += 1e-4;
        s.push(dst, src, 2000, 1001, FLAG_SYN | FLAG_ACK, &[]);
        s.t += 1e-4;
        s.push(src, dst, 1001, 2001, FLAG_ACK, &[]);
        s.seq_up = 1001;
        s.seq_down = 2001;
        s
    }

    /// Start without a handshake, as a capture that began mid-flow would.
    pub fn mid_stream(start: f64, src: Endpoint, dst: Endpoint) -> Self {
        TcpScript {
            src,
            dst,
            t: start,
            seq_up: 1001,
            seq_down: 2001,
            frames: Vec::new(),
            ledger: Ledger {
                src,
                dst,
                transport: Transport::Tcp,
                up_bytes: 0,
                down_bytes: 0,
                up_packets: 0,
                down_packets: 0,
            },
        }
    }

    fn push(&mut self, from: Endpoint, to: Endpoint, seq: u32, ack: u32, flags: u8, payload: &[u8]) {
        self.frames.push(Frame {
            ts: self.t,
            data: tcp_frame(from, to, seq, ack, flags, payload),
        });
    }

    /// Emit one data segment after waiting `dt` seconds.
    pub fn send(&mut self, dir: Direction, dt: f64, payload: &[u8]) {
        self.t += dt;
        match dir {
            Direction::Up => {
                self.push(
                    self.src,
                    self.dst,
                    self.seq_up,
                    self.seq_down,
                    FLAG_PSH | FLAG_ACK,
                    payload,
                );
                self.seq_up = self.seq_up.wrapping_add(payload.len() as u32);
                self.ledger.up_bytes += payload.len() as u64;
                self.ledger.up_packets += 1;
            }
            Direction::Down => {
                self.push(
                    self.dst,
                    self.src,
                    self.seq_down,
                    self.seq_up,
                    FLAG_PSH | FLAG_ACK,
                    payload,
                );
                self.seq_down = self.seq_down.wrapping_add(payload.len() as u32);
                self.ledger.down_bytes += payload.len() as u64;
                self.ledger.down_packets += 1;
            }
        }
    }

    pub fn send_up(&mut self, dt: f64, payload: &[u8]) {
        self.send(Direction::Up, dt, payload);
    }

    pub fn send_down(&mut self, dt: f64, payload: &[u8]) {
        self.send(Direction::Down, dt, payload);
    }

    /// FIN exchange (zero-payload packets).
    pub fn close(&mut self, dt: f64) {
        self.t += dt;
        self.push(
            self.src,
            self.dst,
            self.seq_up,
            self.seq_down,
            FLAG_FIN | FLAG_ACK,
            &[],
        );
        self.t += 1e-4;
        self.push(
            self.dst,
            self.src,
            self.seq_down,
            self.seq_up.wrapping_add(1),
            FLAG_FIN | FLAG_ACK,
            &[],
        );
        self.t += 1e-4;
        self.push(
            self.src,
            self.dst,
            self.seq_up.wrapping_add(1),
            self.seq_down.wrapping_add(1),
            FLAG_ACK,
            &[],
        );
    }

    pub fn last_ts(&self) -> f64 {
        self.t
    }

    pub fn finish(self) -> (Vec<Frame>, Ledger) {
        (self.frames, self.ledger)
    }
}

/// Scripted UDP exchange.
pub struct UdpScript {
    src: Endpoint,
    dst: Endpoint,
    t: f64,
    frames: Vec<Frame>,
    ledger: Ledger,
}

impl UdpScript {
    pub fn new(start: f64, src: Endpoint, dst: Endpoint) -> Self {
        UdpScript {
            src,
            dst,
            t: start,
            frames: Vec::new(),
            ledger: Ledger {
                src,
                dst,
                transport: Transport::Udp,
                up_bytes: 0,
                down_bytes: 0,
                up_packets: 0,
                down_packets: 0,
            },
        }
    }

    pub fn send(&mut self, dir: Direction, dt: f64, payload: &[u8]) {
        self.t += dt;
        let (from, to) = match dir {
            Direction::Up => (self.src, self.dst),
            Direction::Down => (self.dst, self.src),
        };
        self.frames.push(Frame {
            ts: self.t,
            data: udp_frame(from, to, payload),
        });
        match dir {
            Direction::Up => {
                self.ledger.up_bytes += payload.len() as u64;
                self.ledger.up_packets += 1;
            }
            Direction::Down => {
                self.ledger.down_bytes += payload.len() as u64;
                self.ledger.down_packets += 1;
            }
        }
    }

    pub fn send_up(&mut self, dt: f64, payload: &[u8]) {
        self.send(Direction::Up, dt, payload);
    }

    pub fn send_down(&mut self, dt: f64, payload: &[u8]) {
        self.send(Direction::Down, dt, payload);
    }

    pub fn last_ts(&self) -> f64 {
        self.t
    }

    pub fn finish(self) -> (Vec<Frame>, Ledger) {
        (self.frames, self.ledger)
    }
}
