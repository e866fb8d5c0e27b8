//! Passive DNS: parse response messages seen on UDP port 53 and accumulate an
//! IP to domain map for the capture.
//!
//! CNAME chains collapse at absorption time: the address record's IP maps to
//! the leftmost queried name of the chain, the name the client asked for.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use serde::{Deserialize, Serialize};

/// Payload of one answer record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DnsRecordData {
    A(Ipv4Addr),
    Aaaa(Ipv6Addr),
    Cname(String),
    /// Unhandled record type, kept for counting only.
    Other(u16),
}

/// One resource record from the answer section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsAnswer {
    /// Owner name, lowercased, no trailing dot.
    pub name: String,
    pub data: DnsRecordData,
}

/// Decoded header plus answer section of a DNS message.
#[derive(Debug, Clone)]
pub struct DnsMessage {
    pub response: bool,
    /// Queried names, lowercased.
    pub questions: Vec<String>,
    pub answers: Vec<DnsAnswer>,
}

const MAX_NAME_LEN: usize = 255;
const MAX_POINTER_JUMPS: usize = 32;

/// Parse a DNS message (header, question and answer sections). Returns None
/// when the bytes do not form a well-formed message; truncation mid-record is
/// malformed, not partial.
pub fn parse_dns_message(payload: &[u8]) -> Option<DnsMessage> {
    if payload.len() < 12 {
        return None;
    }
    let response = payload[2] & 0x80 != 0;
    let opcode = (payload[2] >> 3) & 0x0f;
    if opcode != 0 {
        return None;
    }
    let qdcount = u16::from_be_bytes([payload[4], payload[5]]);
    let ancount = u16::from_be_bytes([payload[6], payload[7]]);

    let mut pos = 12usize;
    let mut questions = Vec::new();
    for _ in 0..qdcount {
        let (name, next) = parse_name(payload, pos)?;
        pos = next.checked_add(4)?;
        if pos > payload.len() {
            return None;
        }
        questions.push(name);
    }

    let mut answers = Vec::new();
    for _ in 0..ancount {
        let (name, next) = parse_name(payload, pos)?;
        pos = next;
        if pos + 10 > payload.len() {
            return None;
        }
        let rtype = u16::from_be_bytes([payload[pos], payload[pos + 1]]);
        let rdlength = u16::from_be_bytes([payload[pos + 8], payload[pos + 9]]) as usize;
        pos += 10;
        if pos + rdlength > payload.len() {
            return None;
        }
        let rdata = &payload[pos..pos + rdlength];
        let data = match rtype {
            1 if rdlength == 4 => {
                DnsRecordData::A(Ipv4Addr::new(rdata[0], rdata[1], rdata[2], rdata[3]))
            }
            28 if rdlength == 16 => {
                DnsRecordData::Aaaa(Ipv6Addr::from(<[u8; 16]>::try_from(rdata).unwrap()))
            }
            5 => {
                let (target, _) = parse_name(payload, pos)?;
                DnsRecordData::Cname(target)
            }
            other => DnsRecordData::Other(other),
        };
        pos += rdlength;
        answers.push(DnsAnswer { name, data });
    }

    Some(DnsMessage {
        response,
        questions,
        answers,
    })
}

/// Decode a possibly compressed name starting at `pos`. Returns the name and
/// the position just past it in the original read stream.
fn parse_name(msg: &[u8], mut pos: usize) -> Option<(String, usize)> {
    let mut labels: Vec<String> = Vec::new();
    let mut total = 0usize;
    let mut jumps = 0usize;
    // Position after the name in the outer stream; fixed at the first pointer.
    let mut end: Option<usize> = None;

    loop {
        let len = *msg.get(pos)? as usize;
        if len == 0 {
            pos += 1;
            break;
        }
        match len & 0xc0 {
            0xc0 => {
                let lo = *msg.get(pos + 1)? as usize;
                if end.is_none() {
                    end = Some(pos + 2);
                }
                jumps += 1;
                if jumps > MAX_POINTER_JUMPS {
                    return None;
                }
                pos = ((len & 0x3f) << 8) | lo;
            }
            0x00 => {
                let bytes = msg.get(pos + 1..pos + 1 + len)?;
                total += len + 1;
                if total > MAX_NAME_LEN {
                    return None;
                }
                labels.push(String::from_utf8_lossy(bytes).to_lowercase());
                pos += 1 + len;
            }
            _ => return None,
        }
    }
    Some((labels.join("."), end.unwrap_or(pos)))
}

/// IP to domain map built from the DNS responses inside one capture.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DnsMap {
    /// Per IP: name → first time it was seen resolving to that IP.
    entries: BTreeMap<IpAddr, BTreeMap<String, f64>>,
}

impl DnsMap {
    /// Absorb one DNS response. CNAME chains inside the message are walked
    /// back so each address maps to the leftmost queried name. Returns true
    /// when at least one A/AAAA record was recorded.
    pub fn absorb_response(&mut self, payload: &[u8], ts: f64) -> bool {
        let Some(msg) = parse_dns_message(payload) else {
            return false;
        };
        if !msg.response {
            return false;
        }
        // target → owner, to walk a chain leftward.
        let mut owner_of: HashMap<&str, &str> = HashMap::new();
        for ans in &msg.answers {
            if let DnsRecordData::Cname(target) = &ans.data {
                owner_of.entry(target.as_str()).or_insert(ans.name.as_str());
            }
        }
        let mut absorbed = false;
        for ans in &msg.answers {
            let ip = match ans.data {
                DnsRecordData::A(v4) => IpAddr::V4(v4),
                DnsRecordData::Aaaa(v6) => IpAddr::V6(v6),
                _ => continue,
            };
            let mut name = ans.name.as_str();
            let mut seen: HashSet<&str> = HashSet::new();
            while let Some(owner) = owner_of.get(name) {
                if !seen.insert(name) {
                    break;
                }
                name = owner;
            }
            self.insert(ip, name, ts);
            absorbed = true;
        }
        absorbed
    }

    /// Record one resolution directly.
    pub fn insert(&mut self, ip: IpAddr, name: &str, ts: f64) {
        self.entries
            .entry(ip)
            .or_default()
            .entry(name.to_lowercase())
            .or_insert(ts);
    }

    /// All names observed for the IP, sorted.
    pub fn names(&self, ip: IpAddr) -> Vec<&str> {
        self.entries
            .get(&ip)
            .map(|m| m.keys().map(String::as_str).collect())
            .unwrap_or_default()
    }

    /// The name for this IP, but only when exactly one name was observed.
    pub fn lookup_unique(&self, ip: IpAddr) -> Option<&str> {
        let names = self.entries.get(&ip)?;
        if names.len() == 1 {
            names.keys().next().map(String::as_str)
        } else {
            None
        }
    }

    /// Number of mapped IPs.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (IpAddr, Vec<&str>)> {
        self.entries
            .iter()
            .map(|(ip, m)| (*ip, m.keys().map(String::as_str).collect()))
    }
}
