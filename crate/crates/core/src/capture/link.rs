//! Frame decoding from the capture link layer down to transport payloads.
//!
//! Supports Ethernet (with 802.1Q tags), Linux cooked capture, BSD loopback
//! and raw IP link types. Anything else is counted, not parsed.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use super::{Endpoint, Transport};

pub(super) const LINKTYPE_NULL: i32 = 0;
pub(super) const LINKTYPE_ETHERNET: i32 = 1;
pub(super) const LINKTYPE_RAW: i32 = 101;
pub(super) const LINKTYPE_LINUX_SLL: i32 = 113;

/// Transport-level view of one captured frame.
pub(super) struct ParsedPacket {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub transport: Transport,
    pub payload: Vec<u8>,
    /// TCP flag byte; None for UDP.
    pub tcp_flags: Option<u8>,
    pub tcp_seq: Option<u32>,
}

impl ParsedPacket {
    pub fn syn_ack(&self) -> bool {
        matches!(self.tcp_flags, Some(f) if f & 0x02 != 0 && f & 0x10 != 0)
    }
}

pub(super) enum FrameResult {
    Packet(ParsedPacket),
    /// Parsed far enough to know it is not IPv4/IPv6.
    NonIp,
    /// IP but not TCP or UDP.
    NonTransport,
    /// Too short for its own headers.
    Truncated,
}

pub(super) fn parse_frame(linktype: i32, data: &[u8]) -> FrameResult {
    match linktype {
        LINKTYPE_ETHERNET => parse_ethernet(data),
        LINKTYPE_RAW => parse_ip(data),
        LINKTYPE_NULL => {
            if data.len() < 4 {
                return FrameResult::Truncated;
            }
            // Host-order AF value; 2 = INET either way, INET6 varies by OS.
            let af_le = u32::from_le_bytes([data[0], data[1], data[2], data[3]]);
            let af_be = u32::from_be_bytes([data[0], data[1], data[2], data[3]]);
            let af = if af_le <= 0xFF { af_le } else { af_be };
            match af {
                2 => parse_ipv4(&data[4..]),
                24 | 28 | 30 => parse_ipv6(&data[4..]),
                _ => FrameResult::NonIp,
            }
        }
        LINKTYPE_LINUX_SLL => {
            if data.len() < 16 {
                return FrameResult::Truncated;
            }
            let ethertype = u16::from_be_bytes([data[14], data[15]]);
            parse_by_ethertype(ethertype, &data[16..])
        }
        _ => FrameResult::NonIp,
    }
}

fn parse_ethernet(data: &[u8]) -> FrameResult {
    if data.len() < 14 {
        return FrameResult::Truncated;
    }
    let mut ethertype = u16::from_be_bytes([data[12], data[13]]);
    let mut offset = 14;
    // Peel 802.1Q / QinQ tags.
    while ethertype == 0x8100 || ethertype == 0x88a8 {
        if data.len() < offset + 4 {
            return FrameResult::Truncated;
        }
        ethertype = u16::from_be_bytes([data[offset + 2], data[offset + 3]]);
        offset += 4;
    }
    parse_by_ethertype(ethertype, &data[offset..])
}

fn parse_by_ethertype(ethertype: u16, data: &[u8]) -> FrameResult {
    match ethertype {
        0x0800 => parse_ipv4(data),
        0x86dd => parse_ipv6(data),
        _ => FrameResult::NonIp,
    }
}

fn parse_ip(data: &[u8]) -> FrameResult {
    match data.first().map(|b| b >> 4) {
        Some(4) => parse_ipv4(data),
        Some(6) => parse_ipv6(data),
        Some(_) => FrameResult::NonIp,
        None => FrameResult::Truncated,
    }
}

fn parse_ipv4(data: &[u8]) -> FrameResult {
    if data.len() < 20 {
        return FrameResult::Truncated;
    }
    if data[0] >> 4 != 4 {
        return FrameResult::NonIp;
    }
    let ihl = (data[0] & 0x0f) as usize * 4;
    if ihl < 20 || data.len() < ihl {
        return FrameResult::Truncated;
    }
    let total_len = u16::from_be_bytes([data[2], data[3]]) as usize;
    let end = total_len.clamp(ihl, data.len());
    let frag = u16::from_be_bytes([data[6], data[7]]);
    // Non-first fragments carry no transport header.
    if frag & 0x1fff != 0 {
        return FrameResult::NonTransport;
    }
    let proto = data[9];
    let src = IpAddr::V4(Ipv4Addr::new(data[12], data[13], data[14], data[15]));
    let dst = IpAddr::V4(Ipv4Addr::new(data[16], data[17], data[18], data[19]));
    parse_transport(proto, src, dst, &data[ihl..end])
}

fn parse_ipv6(data: &[u8]) -> FrameResult {
    if data.len() < 40 {
        return FrameResult::Truncated;
    }
    if data[0] >> 4 != 6 {
        return FrameResult::NonIp;
    }
    let payload_len = u16::from_be_bytes([data[4], data[5]]) as usize;
    let mut next = data[6];
    let src = IpAddr::V6(Ipv6Addr::from(<[u8; 16]>::try_from(&data[8..24]).unwrap()));
    let dst = IpAddr::V6(Ipv6Addr::from(<[u8; 16]>::try_from(&data[24..40]).unwrap()));
    let end = (40 + payload_len).min(data.len());
    let mut offset = 40;
    // Walk the fixed-layout extension headers.
    loop {
        match next {
            0 | 43 | 60 => {
                if end < offset + 8 {
                    return FrameResult::Truncated;
                }
                let hdr_len = 8 + data[offset + 1] as usize * 8;
                next = data[offset];
                if end < offset + hdr_len {
                    return FrameResult::Truncated;
                }
                offset += hdr_len;
            }
            44 => {
                if end < offset + 8 {
                    return FrameResult::Truncated;
                }
                let frag_off = u16::from_be_bytes([data[offset + 2], data[offset + 3]]) >> 3;
                if frag_off != 0 {
                    return FrameResult::NonTransport;
                }
                next = data[offset];
                offset += 8;
            }
            _ => break,
        }
    }
    parse_transport(next, src, dst, &data[offset..end])
}

fn parse_transport(proto: u8, src_ip: IpAddr, dst_ip: IpAddr, data: &[u8]) -> FrameResult {
    match proto {
        6 => {
            if data.len() < 20 {
                return FrameResult::Truncated;
            }
            let data_off = (data[12] >> 4) as usize * 4;
            if data_off < 20 || data.len() < data_off {
                return FrameResult::Truncated;
            }
            FrameResult::Packet(ParsedPacket {
                src: Endpoint {
                    ip: src_ip,
                    port: u16::from_be_bytes([data[0], data[1]]),
                },
                dst: Endpoint {
                    ip: dst_ip,
                    port: u16::from_be_bytes([data[2], data[3]]),
                },
                transport: Transport::Tcp,
                payload: data[data_off..].to_vec(),
                tcp_flags: Some(data[13]),
                tcp_seq: Some(u32::from_be_bytes([data[4], data[5], data[6], data[7]])),
            })
        }
        17 => {
            if data.len() < 8 {
                return FrameResult::Truncated;
            }
            let udp_len = u16::from_be_bytes([data[4], data[5]]) as usize;
            let end = udp_len.clamp(8, data.len());
            FrameResult::Packet(ParsedPacket {
                src: Endpoint {
                    ip: src_ip,
                    port: u16::from_be_bytes([data[0], data[1]]),
                },
                dst: Endpoint {
                    ip: dst_ip,
                    port: u16::from_be_bytes([data[2], data[3]]),
                },
                transport: Transport::Udp,
                payload: data[8..end].to_vec(),
                tcp_flags: None,
                tcp_seq: None,
            })
        }
        _ => FrameResult::NonTransport,
    }
}
