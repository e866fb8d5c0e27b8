//! Application-protocol identification and hierarchical destination
//! extraction: IP, port, FQDN (with its provenance), URL, and apex domain.

pub mod http;
pub mod suffix;
pub mod tls;

mod detect;
mod report;

pub use detect::identify_protocol;
pub use report::{protocol_mix_report, write_mix_csv, MixRow};
pub use suffix::SuffixList;

use std::fmt;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::capture::{Direction, DnsMap, Flow};

/// Application-layer protocol of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "HTTP")]
    Http,
    #[serde(rename = "HTTPS")]
    Https,
    #[serde(rename = "QUIC")]
    Quic,
    #[serde(rename = "SMTP")]
    Smtp,
    #[serde(rename = "IMAP")]
    Imap,
    #[serde(rename = "POP3")]
    Pop3,
    #[serde(rename = "DNS")]
    Dns,
    #[serde(rename = "DoH")]
    Doh,
    #[serde(rename = "SSDP")]
    Ssdp,
    #[serde(rename = "NAT-PMP")]
    NatPmp,
    /// Recognized as some service outside the analyzed set.
    Other,
    Unknown,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Http => "HTTP",
            Protocol::Https => "HTTPS",
            Protocol::Quic => "QUIC",
            Protocol::Smtp => "SMTP",
            Protocol::Imap => "IMAP",
            Protocol::Pop3 => "POP3",
            Protocol::Dns => "DNS",
            Protocol::Doh => "DoH",
            Protocol::Ssdp => "SSDP",
            Protocol::NatPmp => "NAT-PMP",
            Protocol::Other => "Other",
            Protocol::Unknown => "Unknown",
        }
    }

    /// Web traffic in the abnormal-traffic sense: browsers speak these.
    pub fn is_web(self) -> bool {
        matches!(
            self,
            Protocol::Http | Protocol::Https | Protocol::Quic | Protocol::Doh
        )
    }

    /// Conventional ports, for report display.
    pub fn typical_port(self) -> &'static str {
        match self {
            Protocol::Http => "TCP 80",
            Protocol::Https => "TCP 443",
            Protocol::Quic => "UDP 443",
            Protocol::Smtp => "TCP 25/587",
            Protocol::Imap => "TCP 143/993",
            Protocol::Pop3 => "TCP 110/995",
            Protocol::Dns => "TCP/UDP 53",
            Protocol::Doh => "TCP 443",
            Protocol::Ssdp => "UDP 1900",
            Protocol::NatPmp => "UDP 5351",
            Protocol::Other | Protocol::Unknown => "N/A",
        }
    }

    /// Row order of the protocol-mix report: web and mail services first,
    /// infrastructure protocols next, buckets last.
    pub(crate) fn mix_order(self) -> usize {
        match self {
            Protocol::Http => 0,
            Protocol::Https => 1,
            Protocol::Smtp => 2,
            Protocol::Imap => 3,
            Protocol::Pop3 => 4,
            Protocol::Dns => 5,
            Protocol::Doh => 6,
            Protocol::Quic => 7,
            Protocol::Ssdp => 8,
            Protocol::NatPmp => 9,
            Protocol::Other => 10,
            Protocol::Unknown => 11,
        }
    }

    pub fn all() -> &'static [Protocol] {
        &[
            Protocol::Http,
            Protocol::Https,
            Protocol::Smtp,
            Protocol::Imap,
            Protocol::Pop3,
            Protocol::Dns,
            Protocol::Doh,
            Protocol::Quic,
            Protocol::Ssdp,
            Protocol::NatPmp,
            Protocol::Other,
            Protocol::Unknown,
        ]
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How a protocol tag was decided. `PayloadParse` means the first payload
/// bytes identified the service (for TLS-wrapped mail ports, the TLS framing
/// plus the canonical port); `PortConvention` is the fallback when payload is
/// absent or opaque.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Evidence {
    PayloadParse,
    PortConvention,
}

/// Protocol decision for one flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolTag {
    pub protocol: Protocol,
    pub evidence: Evidence,
}

/// Where a destination FQDN came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FqdnSource {
    HostHeader,
    Sni,
    DnsMap,
    None,
}

/// Hierarchical destination of one flow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DestinationRecord {
    pub ip: IpAddr,
    pub port: u16,
    pub fqdn: Option<String>,
    pub fqdn_source: FqdnSource,
    /// First-request URL; only plaintext HTTP flows carry one.
    pub url: Option<String>,
    pub apex_domain: Option<String>,
}

/// Identification settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppidConfig {
    /// Hosts whose HTTPS/HTTP traffic is DNS-over-HTTPS.
    pub doh_endpoints: Vec<String>,
}

impl Default for AppidConfig {
    fn default() -> Self {
        AppidConfig {
            doh_endpoints: vec![
                "cloudflare-dns.com".into(),
                "mozilla.cloudflare-dns.com".into(),
                "dns.google".into(),
                "dns.quad9.net".into(),
            ],
        }
    }
}

impl AppidConfig {
    pub fn is_doh_endpoint(&self, host: &str) -> bool {
        self.doh_endpoints.iter().any(|e| e.eq_ignore_ascii_case(host))
    }
}

/// Extract the destination record for a flow. FQDN sources are tried in
/// order: HTTP Host header, TLS SNI, unique DNS-map entry; a malformed or
/// IP-literal value skips to the next source.
pub fn extract_destination(
    flow: &Flow,
    tag: ProtocolTag,
    dns: &DnsMap,
    suffixes: &SuffixList,
) -> DestinationRecord {
    let ip = flow.key.dst.ip;
    let port = flow.key.dst.port;
    let up = flow.payload_stream(Direction::Up, detect::DETECT_CAP);

    let mut fqdn: Option<String> = None;
    let mut source = FqdnSource::None;
    let mut url: Option<String> = None;

    if matches!(tag.protocol, Protocol::Http | Protocol::Doh) {
        if let Some(first) = http::parse_requests(&up).first() {
            url = first.url();
            if let Some(host) = first.host_name() {
                if !is_ip_literal(&host) {
                    fqdn = Some(host);
                    source = FqdnSource::HostHeader;
                }
            }
        }
    }
    if fqdn.is_none() {
        if let Some(name) = tls::sni(&up) {
            if !is_ip_literal(&name) {
                fqdn = Some(name);
                source = FqdnSource::Sni;
            }
        }
    }
    if fqdn.is_none() {
        if let Some(name) = dns.lookup_unique(ip) {
            fqdn = Some(name.to_string());
            source = FqdnSource::DnsMap;
        }
    }

    let apex_domain = fqdn.as_deref().and_then(|f| suffixes.registrable(f));
    DestinationRecord {
        ip,
        port,
        fqdn,
        fqdn_source: source,
        url,
        apex_domain,
    }
}

fn is_ip_literal(host: &str) -> bool {
    host.parse::<IpAddr>().is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::Transport;
    use crate::synth::{endpoint, make_flow};

    fn dest(flow: &Flow, dns: &DnsMap) -> DestinationRecord {
        let tag = identify_protocol(flow, &AppidConfig::default());
        extract_destination(flow, tag, dns, SuffixList::bundled())
    }

    #[test]
    fn https_sni_with_apex() {
        let hello = tls::build_client_hello(Some("www.amazon.com"));
        let flow = make_flow(
            Transport::Tcp,
            endpoint("10.0.0.2:40100"),
            endpoint("176.32.103.205:443"),
            0.0,
            &[(Direction::Up, 0.0, &hello)],
        );
        let d = dest(&flow, &DnsMap::default());
        assert_eq!(d.fqdn.as_deref(), Some("www.amazon.com"));
        assert_eq!(d.fqdn_source, FqdnSource::Sni);
        assert_eq!(d.apex_domain.as_deref(), Some("amazon.com"));
        assert_eq!(d.url, None);
    }

    #[test]
    fn http_host_header_builds_url() {
        let flow = make_flow(
            Transport::Tcp,
            endpoint("10.0.0.2:40101"),
            endpoint("198.51.100.4:80"),
            0.0,
            &[(
                Direction::Up,
                0.0,
                b"GET /a?b=1 HTTP/1.1\r\nHost: shop.example\r\n\r\n".as_slice(),
            )],
        );
        let d = dest(&flow, &DnsMap::default());
        assert_eq!(d.url.as_deref(), Some("http://shop.example/a?b=1"));
        assert_eq!(d.fqdn.as_deref(), Some("shop.example"));
        assert_eq!(d.fqdn_source, FqdnSource::HostHeader);
    }

    #[test]
    fn sniless_https_falls_back_to_dns_map() {
        let hello = tls::build_client_hello(None);
        let flow = make_flow(
            Transport::Tcp,
            endpoint("10.0.0.2:40102"),
            endpoint("203.0.113.77:443"),
            0.0,
            &[(Direction::Up, 0.0, &hello)],
        );
        let mut dns = DnsMap::default();
        dns.insert("203.0.113.77".parse().unwrap(), "cdn.example.org", 1.0);
        let d = dest(&flow, &dns);
        assert_eq!(d.fqdn.as_deref(), Some("cdn.example.org"));
        assert_eq!(d.fqdn_source, FqdnSource::DnsMap);
        assert_eq!(d.apex_domain.as_deref(), Some("example.org"));
    }

    #[test]
    fn ambiguous_dns_mapping_gives_no_fqdn() {
        let flow = make_flow(
            Transport::Tcp,
            endpoint("10.0.0.2:40103"),
            endpoint("203.0.113.88:443"),
            0.0,
            &[(Direction::Up, 0.0, &[0x17, 0x03, 0x03, 0x00, 0x01, 0xff])],
        );
        let mut dns = DnsMap::default();
        dns.insert("203.0.113.88".parse().unwrap(), "a.example", 1.0);
        dns.insert("203.0.113.88".parse().unwrap(), "b.example", 2.0);
        let d = dest(&flow, &dns);
        assert_eq!(d.fqdn, None);
        assert_eq!(d.fqdn_source, FqdnSource::None);
        assert_eq!(d.apex_domain, None);
    }

    #[test]
    fn ip_literal_host_is_skipped() {
        let flow = make_flow(
            Transport::Tcp,
            endpoint("10.0.0.2:40104"),
            endpoint("198.51.100.4:80"),
            0.0,
            &[(
                Direction::Up,
                0.0,
                b"GET / HTTP/1.1\r\nHost: 198.51.100.4\r\n\r\n".as_slice(),
            )],
        );
        let d = dest(&flow, &DnsMap::default());
        // URL still forms from the raw Host; the FQDN does not.
        assert_eq!(d.url.as_deref(), Some("http://198.51.100.4/"));
        assert_eq!(d.fqdn, None);
        assert_eq!(d.fqdn_source, FqdnSource::None);
    }

    #[test]
    fn extraction_is_deterministic() {
        let hello = tls::build_client_hello(Some("stable.example"));
        let flow = make_flow(
            Transport::Tcp,
            endpoint("10.0.0.2:40105"),
            endpoint("203.0.113.99:443"),
            0.0,
            &[(Direction::Up, 0.0, &hello)],
        );
        let dns = DnsMap::default();
        let a = dest(&flow, &dns);
        let b = dest(&flow, &dns);
        assert_eq!(a, b);
    }
}
