//! Application-protocol identification: payload parsing first, the
//! typical-port table as fallback, Unknown as the honest default.

use crate::capture::{parse_dns_message, Direction, Flow, Transport};

use super::{http, tls, AppidConfig, Evidence, Protocol, ProtocolTag};

/// Bytes of reassembled stream inspected per direction.
pub(super) const DETECT_CAP: usize = 4096;

fn tag(protocol: Protocol, evidence: Evidence) -> ProtocolTag {
    ProtocolTag { protocol, evidence }
}

pub fn identify_protocol(flow: &Flow, cfg: &AppidConfig) -> ProtocolTag {
    let up = flow.payload_stream(Direction::Up, DETECT_CAP);
    let down = flow.payload_stream(Direction::Down, DETECT_CAP);

    let by_payload = match flow.key.transport {
        Transport::Tcp => detect_tcp(flow, &up, &down, cfg),
        Transport::Udp => detect_udp(flow, cfg),
    };
    if let Some(protocol) = by_payload {
        return tag(protocol, Evidence::PayloadParse);
    }
    if let Some(protocol) = by_port(flow) {
        return tag(protocol, Evidence::PortConvention);
    }
    tag(Protocol::Unknown, Evidence::PortConvention)
}

fn detect_tcp(flow: &Flow, up: &[u8], down: &[u8], cfg: &AppidConfig) -> Option<Protocol> {
    if http::starts_with_request(up) {
        let doh = http::parse_requests(up)
            .first()
            .and_then(http::HttpRequest::host_name)
            .is_some_and(|h| cfg.is_doh_endpoint(&h));
        return Some(if doh { Protocol::Doh } else { Protocol::Http });
    }
    if tls::is_client_hello(up) {
        if let Some(name) = tls::sni(up) {
            if cfg.is_doh_endpoint(&name) {
                return Some(Protocol::Doh);
            }
        }
        // TLS on a conventional mail port is the mail service, wrapped; the
        // port picks the protocol there, so the evidence stays honest below.
        return Some(match flow.key.dst.port {
            993 => Protocol::Imap,
            995 => Protocol::Pop3,
            465 => Protocol::Smtp,
            _ => Protocol::Https,
        });
    }
    if down.starts_with(b"220 ") || down.starts_with(b"220-") {
        return Some(Protocol::Smtp);
    }
    if up.starts_with(b"EHLO ") || up.starts_with(b"HELO ") {
        return Some(Protocol::Smtp);
    }
    if down.starts_with(b"* OK") || down.starts_with(b"* PREAUTH") {
        return Some(Protocol::Imap);
    }
    if down.starts_with(b"+OK") {
        return Some(Protocol::Pop3);
    }
    if is_tcp_dns(up) || is_tcp_dns(down) {
        return Some(Protocol::Dns);
    }
    // Server-only capture of a plaintext HTTP exchange.
    if up.is_empty() && http::starts_with_response(down) {
        return Some(Protocol::Http);
    }
    None
}

/// DNS over TCP: two-byte length prefix, then a well-formed message.
fn is_tcp_dns(stream: &[u8]) -> bool {
    if stream.len() < 14 {
        return false;
    }
    let len = u16::from_be_bytes([stream[0], stream[1]]) as usize;
    if len + 2 > stream.len() {
        return false;
    }
    parse_dns_message(&stream[2..2 + len]).is_some()
}

fn detect_udp(flow: &Flow, _cfg: &AppidConfig) -> Option<Protocol> {
    let first_up = flow.packets_in(Direction::Up).next().map(|p| &p.payload[..]);
    let first_down = flow
        .packets_in(Direction::Down)
        .next()
        .map(|p| &p.payload[..]);
    let first = first_up.or(first_down)?;

    if parse_dns_message(first).is_some() {
        return Some(Protocol::Dns);
    }
    if is_quic_long_header(first) {
        return Some(Protocol::Quic);
    }
    if first.starts_with(b"M-SEARCH ") || first.starts_with(b"NOTIFY ") {
        return Some(Protocol::Ssdp);
    }
    if is_nat_pmp(flow, first) {
        return Some(Protocol::NatPmp);
    }
    None
}

/// QUIC long-header packet: top two bits set, non-zero 32-bit version.
fn is_quic_long_header(payload: &[u8]) -> bool {
    payload.len() >= 7
        && payload[0] & 0xc0 == 0xc0
        && payload[1..5] != [0, 0, 0, 0]
}

/// NAT-PMP speaks on UDP 5351 with version byte 0 and opcodes 0-2
/// (requests) or 128-130 (responses).
fn is_nat_pmp(flow: &Flow, payload: &[u8]) -> bool {
    if flow.key.dst.port != 5351 || payload.len() < 2 || payload.len() > 16 {
        return false;
    }
    payload[0] == 0 && matches!(payload[1], 0..=2 | 128..=130)
}

fn by_port(flow: &Flow) -> Option<Protocol> {
    let port = flow.key.dst.port;
    let known = match flow.key.transport {
        Transport::Tcp => match port {
            80 => Protocol::Http,
            443 => Protocol::Https,
            25 | 587 => Protocol::Smtp,
            143 | 993 => Protocol::Imap,
            110 | 995 => Protocol::Pop3,
            53 => Protocol::Dns,
            // Recognizable services outside the analyzed set.
            21 | 22 | 23 | 465 | 3389 | 5900 | 8080 | 8443 => Protocol::Other,
            _ => return None,
        },
        Transport::Udp => match port {
            53 => Protocol::Dns,
            443 => Protocol::Quic,
            1900 => Protocol::Ssdp,
            5351 => Protocol::NatPmp,
            123 | 161 | 500 | 4500 | 1194 | 5353 => Protocol::Other,
            _ => return None,
        },
    };
    Some(known)
}
