//! Flow triage: split traffic into control flows (node ↔ provider
//! infrastructure), tunnel flows (customer traffic inside a provider
//! envelope), and relayed flows (what the customer actually fetched).
//!
//! Classification is signature driven. Domain signatures match the
//! destination FQDN; protocol heuristics cover tunnels that lack one, like
//! TLS-looking streams that never performed a handshake.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::appid::{tls, DestinationRecord};
use crate::capture::{Direction, Flow};

const DEFAULT_SIGNATURES: &str = include_str!("default_signatures.toml");

/// Bytes scanned per direction by the headerless-TLS heuristic.
const HEURISTIC_SCAN_CAP: usize = 4096;

pub const HEURISTIC_HEADERLESS_TLS: &str = "tls-records-without-handshake";

#[derive(Debug, Error)]
pub enum TriageError {
    #[error("cannot read signature file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad signature file {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("provider {provider} lists {domain} as both control and tunnel")]
    Overlap { provider: String, domain: String },
    #[error("provider {provider} names unknown heuristic {name}")]
    UnknownHeuristic { provider: String, name: String },
}

/// Triage class of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriageClass {
    Control,
    Tunnel,
    Relayed,
}

impl fmt::Display for TriageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TriageClass::Control => write!(f, "control"),
            TriageClass::Tunnel => write!(f, "tunnel"),
            TriageClass::Relayed => write!(f, "relayed"),
        }
    }
}

/// What the classifier matched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriageEvidence {
    FqdnMatch,
    ProtocolHeuristic,
    Default,
}

/// Classification result for one flow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowClass {
    pub class: TriageClass,
    pub provider: Option<String>,
    pub matched_signature: Option<String>,
    pub evidence: TriageEvidence,
}

impl FlowClass {
    fn relayed() -> Self {
        FlowClass {
            class: TriageClass::Relayed,
            provider: None,
            matched_signature: None,
            evidence: TriageEvidence::Default,
        }
    }
}

/// One provider's signatures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderSignatureSet {
    pub provider: String,
    /// FQDN patterns: exact, or any-subdomain when the pattern starts with
    /// a dot (".example.net").
    #[serde(default)]
    pub control_domains: Vec<String>,
    #[serde(default)]
    pub tunnel_domains: Vec<String>,
    #[serde(default)]
    pub tunnel_protocol_heuristics: Vec<String>,
}

fn pattern_matches(pattern: &str, fqdn: &str) -> bool {
    if let Some(suffix) = pattern.strip_prefix('.') {
        fqdn == suffix || fqdn.ends_with(pattern)
    } else {
        fqdn == pattern
    }
}

impl ProviderSignatureSet {
    fn match_in<'a>(&'a self, patterns: &'a [String], fqdn: &str) -> Option<&'a str> {
        patterns
            .iter()
            .find(|p| pattern_matches(p, fqdn))
            .map(String::as_str)
    }
}

/// A loaded, validated signature configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignatureConfig {
    pub providers: Vec<ProviderSignatureSet>,
}

impl SignatureConfig {
    /// The built-in provider signatures.
    pub fn bundled() -> SignatureConfig {
        Self::from_toml(DEFAULT_SIGNATURES, "<bundled>").expect("bundled signatures are valid")
    }

    pub fn load(path: &Path) -> Result<SignatureConfig, TriageError> {
        let text = std::fs::read_to_string(path).map_err(|source| TriageError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<SignatureConfig, TriageError> {
        let mut cfg: SignatureConfig =
            toml::from_str(text).map_err(|e| TriageError::Parse {
                path: origin.to_string(),
                detail: e.to_string(),
            })?;
        for set in &mut cfg.providers {
            for list in [&mut set.control_domains, &mut set.tunnel_domains] {
                for d in list.iter_mut() {
                    *d = d.trim_end_matches('.').to_lowercase();
                }
            }
            for domain in &set.control_domains {
                if set.tunnel_domains.contains(domain) {
                    return Err(TriageError::Overlap {
                        provider: set.provider.clone(),
                        domain: domain.clone(),
                    });
                }
            }
            for name in &set.tunnel_protocol_heuristics {
                if name != HEURISTIC_HEADERLESS_TLS {
                    return Err(TriageError::UnknownHeuristic {
                        provider: set.provider.clone(),
                        name: name.clone(),
                    });
                }
            }
        }
        Ok(cfg)
    }
}

/// Classify one flow. Tiered precedence: any provider's control domains
/// first, then tunnel domains, then tunnel protocol heuristics; providers
/// are tried in configuration order within each tier. No match is a relayed
/// flow by construction.
pub fn classify_flow(
    flow: &Flow,
    dest: &DestinationRecord,
    sigs: &SignatureConfig,
) -> FlowClass {
    let fqdn = dest.fqdn.as_deref();

    if let Some(fqdn) = fqdn {
        for set in &sigs.providers {
            if let Some(sig) = set.match_in(&set.control_domains, fqdn) {
                return FlowClass {
                    class: TriageClass::Control,
                    provider: Some(set.provider.clone()),
                    matched_signature: Some(sig.to_string()),
                    evidence: TriageEvidence::FqdnMatch,
                };
            }
        }
        for set in &sigs.providers {
            if let Some(sig) = set.match_in(&set.tunnel_domains, fqdn) {
                return FlowClass {
                    class: TriageClass::Tunnel,
                    provider: Some(set.provider.clone()),
                    matched_signature: Some(sig.to_string()),
                    evidence: TriageEvidence::FqdnMatch,
                };
            }
        }
    }

    for set in &sigs.providers {
        for name in &set.tunnel_protocol_heuristics {
            if name == HEURISTIC_HEADERLESS_TLS && detect_headerless_tls(flow) {
                return FlowClass {
                    class: TriageClass::Tunnel,
                    provider: Some(set.provider.clone()),
                    matched_signature: Some(name.clone()),
                    evidence: TriageEvidence::ProtocolHeuristic,
                };
            }
        }
    }

    FlowClass::relayed()
}

/// True when a flow looks like a TLS session that never performed a
/// handshake: every payload in both directions avoids a ClientHello start,
/// and the first bytes of each direction parse as well-formed TLS records.
/// Flows with an empty direction carry too little evidence and return false.
pub fn detect_headerless_tls(flow: &Flow) -> bool {
    let mut saw_up = false;
    let mut saw_down = false;
    for pkt in &flow.packets {
        if pkt.payload.is_empty() {
            continue;
        }
        match pkt.direction {
            Direction::Up => saw_up = true,
            Direction::Down => saw_down = true,
        }
        if tls::is_client_hello(&pkt.payload) {
            return false;
        }
    }
    if !saw_up || !saw_down {
        return false;
    }
    tls::valid_record_chain(&flow.payload_stream(Direction::Up, HEURISTIC_SCAN_CAP))
        && tls::valid_record_chain(&flow.payload_stream(Direction::Down, HEURISTIC_SCAN_CAP))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::appid::{
        extract_destination, identify_protocol, AppidConfig, SuffixList,
    };
    use crate::capture::{DnsMap, Transport};
    use crate::synth::{endpoint, make_flow};

    fn classify(flow: &Flow, sigs: &SignatureConfig) -> FlowClass {
        let tag = identify_protocol(flow, &AppidConfig::default());
        let dest = extract_destination(flow, tag, &DnsMap::default(), SuffixList::bundled());
        classify_flow(flow, &dest, sigs)
    }

    fn tls_flow_to(sni: &str, port: u16) -> Flow {
        let hello = tls::build_client_hello(Some(sni));
        let resp = tls::build_app_records(&[900]);
        make_flow(
            Transport::Tcp,
            endpoint("10.0.0.2:41000"),
            endpoint(&format!("203.0.113.10:{port}")),
            0.0,
            &[
                (Direction::Up, 0.0, &hello),
                (Direction::Down, 0.01, &resp),
            ],
        )
    }

    fn headerless_flow() -> Flow {
        let up = tls::build_app_records(&[200, 310]);
        let down = tls::build_app_records(&[1400, 800]);
        make_flow(
            Transport::Tcp,
            endpoint("10.0.0.2:41001"),
            endpoint("203.0.113.11:443"),
            0.0,
            &[
                (Direction::Up, 0.0, &up[..207]),
                (Direction::Down, 0.01, &down),
                (Direction::Up, 0.02, &up[207..]),
            ],
        )
    }

    #[test]
    fn packetstream_tunnel_signature() {
        let flow = tls_flow_to("proxy.packetstream.io", 443);
        let fc = classify(&flow, &SignatureConfig::bundled());
        assert_eq!(fc.class, TriageClass::Tunnel);
        assert_eq!(fc.provider.as_deref(), Some("PacketStream"));
        assert_eq!(fc.matched_signature.as_deref(), Some("proxy.packetstream.io"));
        assert_eq!(fc.evidence, TriageEvidence::FqdnMatch);
    }

    #[test]
    fn iproyal_control_signature() {
        let flow = tls_flow_to("api.iproyal.com", 443);
        let fc = classify(&flow, &SignatureConfig::bundled());
        assert_eq!(fc.class, TriageClass::Control);
        assert_eq!(fc.provider.as_deref(), Some("IPRoyal"));
    }

    #[test]
    fn honeygain_control_and_doh_endpoint() {
        let api = classify(&tls_flow_to("api.honeygain.com", 443), &SignatureConfig::bundled());
        assert_eq!(api.class, TriageClass::Control);
        assert_eq!(api.provider.as_deref(), Some("Honeygain"));

        let doh = classify(&tls_flow_to("cloudflare-dns.com", 443), &SignatureConfig::bundled());
        assert_eq!(doh.class, TriageClass::Control);
        assert_eq!(doh.provider.as_deref(), Some("Honeygain"));
    }

    #[test]
    fn unmatched_flow_is_relayed() {
        let fc = classify(&tls_flow_to("www.amazon.com", 443), &SignatureConfig::bundled());
        assert_eq!(fc.class, TriageClass::Relayed);
        assert_eq!(fc.provider, None);
        assert_eq!(fc.matched_signature, None);
        assert_eq!(fc.evidence, TriageEvidence::Default);
    }

    #[test]
    fn headerless_tls_flow_is_iproyal_tunnel() {
        let fc = classify(&headerless_flow(), &SignatureConfig::bundled());
        assert_eq!(fc.class, TriageClass::Tunnel);
        assert_eq!(fc.provider.as_deref(), Some("IPRoyal"));
        assert_eq!(
            fc.matched_signature.as_deref(),
            Some(HEURISTIC_HEADERLESS_TLS)
        );
        assert_eq!(fc.evidence, TriageEvidence::ProtocolHeuristic);
    }

    #[test]
    fn headerless_detector_rejects_real_handshake() {
        assert!(!detect_headerless_tls(&tls_flow_to("x.example", 443)));
    }

    #[test]
    fn headerless_detector_rejects_one_sided_flow() {
        let up = tls::build_app_records(&[120]);
        let flow = make_flow(
            Transport::Tcp,
            endpoint("10.0.0.2:41002"),
            endpoint("203.0.113.12:443"),
            0.0,
            &[(Direction::Up, 0.0, &up)],
        );
        assert!(!detect_headerless_tls(&flow));
    }

    #[test]
    fn headerless_detector_has_no_plaintext_false_positives() {
        // 21 plaintext flows: HTTP, SMTP, and framed DNS-over-TCP.
        let mut flows = Vec::new();
        for i in 0..7 {
            let request = format!("GET /{i} HTTP/1.1\r\nHost: h{i}.example\r\n\r\n");
            flows.push(make_flow(
                Transport::Tcp,
                endpoint(&format!("10.0.0.{}:4200{}", i + 2, i)),
                endpoint("203.0.113.20:80"),
                0.0,
                &[
                    (Direction::Up, 0.0, request.as_bytes()),
                    (Direction::Down, 0.01, b"HTTP/1.1 200 OK\r\n\r\nhello".as_slice()),
                ],
            ));
            flows.push(make_flow(
                Transport::Tcp,
                endpoint(&format!("10.0.1.{}:4210{}", i + 2, i)),
                endpoint("203.0.113.21:25"),
                0.0,
                &[
                    (Direction::Down, 0.0, b"220 mx.example ESMTP\r\n".as_slice()),
                    (Direction::Up, 0.01, b"EHLO client.example\r\n".as_slice()),
                    (Direction::Down, 0.02, b"250 ok\r\n".as_slice()),
                ],
            ));
            let msg = crate::synth::dns_response(
                i as u16,
                "example.com",
                &[],
                &[("example.com", "203.0.113.30".parse().unwrap())],
            );
            let mut framed = (msg.len() as u16).to_be_bytes().to_vec();
            framed.extend_from_slice(&msg);
            let mut query = (12u16).to_be_bytes().to_vec();
            query.extend_from_slice(&[0; 12]);
            flows.push(make_flow(
                Transport::Tcp,
                endpoint(&format!("10.0.2.{}:4220{}", i + 2, i)),
                endpoint("203.0.113.22:53"),
                0.0,
                &[
                    (Direction::Up, 0.0, &query),
                    (Direction::Down, 0.01, &framed),
                ],
            ));
        }
        assert!(flows.len() >= 20);
        for flow in &flows {
            assert!(
                !detect_headerless_tls(flow),
                "false positive on plaintext flow to {:?}",
                flow.key.dst
            );
        }
    }

    #[test]
    fn suffix_patterns_match_subdomains() {
        let cfg = SignatureConfig::from_toml(
            r#"
            [[providers]]
            provider = "Example"
            tunnel_domains = [".gw.example-pool.net"]
            "#,
            "<test>",
        )
        .unwrap();
        let hit = classify(&tls_flow_to("node7.gw.example-pool.net", 443), &cfg);
        assert_eq!(hit.class, TriageClass::Tunnel);
        let apex_hit = classify(&tls_flow_to("gw.example-pool.net", 443), &cfg);
        assert_eq!(apex_hit.class, TriageClass::Tunnel);
        let miss = classify(&tls_flow_to("gw.example-pool.net.evil.test", 443), &cfg);
        assert_eq!(miss.class, TriageClass::Relayed);
    }

    #[test]
    fn control_tier_beats_tunnel_tier_across_providers() {
        let cfg = SignatureConfig::from_toml(
            r#"
            [[providers]]
            provider = "A"
            tunnel_domains = ["shared.example"]

            [[providers]]
            provider = "B"
            control_domains = ["shared.example"]
            "#,
            "<test>",
        )
        .unwrap();
        let fc = classify(&tls_flow_to("shared.example", 443), &cfg);
        assert_eq!(fc.class, TriageClass::Control);
        assert_eq!(fc.provider.as_deref(), Some("B"));
    }

    #[test]
    fn overlapping_domains_within_provider_rejected() {
        let err = SignatureConfig::from_toml(
            r#"
            [[providers]]
            provider = "Bad"
            control_domains = ["x.example"]
            tunnel_domains = ["x.example"]
            "#,
            "<test>",
        )
        .unwrap_err();
        assert!(err.to_string().contains("both control and tunnel"));
    }

    #[test]
    fn unknown_heuristic_rejected() {
        let err = SignatureConfig::from_toml(
            r#"
            [[providers]]
            provider = "Bad"
            tunnel_protocol_heuristics = ["quantum-entanglement"]
            "#,
            "<test>",
        )
        .unwrap_err();
        assert!(err.to_string().contains("unknown heuristic"));
    }

    #[test]
    fn every_flow_gets_exactly_one_class() {
        let sigs = SignatureConfig::bundled();
        let flows = vec![
            tls_flow_to("proxy.packetstream.io", 443),
            tls_flow_to("api.iproyal.com", 443),
            tls_flow_to("api.honeygain.com", 443),
            tls_flow_to("www.amazon.com", 443),
            headerless_flow(),
        ];
        let mut counts = [0usize; 3];
        for flow in &flows {
            match classify(flow, &sigs).class {
                TriageClass::Control => counts[0] += 1,
                TriageClass::Tunnel => counts[1] += 1,
                TriageClass::Relayed => counts[2] += 1,
            }
        }
        assert_eq!(counts.iter().sum::<usize>(), flows.len());
        assert_eq!(counts, [2, 2, 1]);
    }

    #[test]
    fn added_signatures_never_demote_to_relayed() {
        use proptest::prelude::*;

        let mut runner = proptest::test_runner::TestRunner::deterministic();
        let strategy = (
            proptest::string::string_regex("[a-z]{1,8}").unwrap(),
            proptest::string::string_regex("[a-z]{1,8}").unwrap(),
        );

        runner
            .run(&strategy, |(host, extra)| {
                let base = SignatureConfig::bundled();
                let flow = tls_flow_to(&format!("{host}.example"), 443);
                let before = classify(&flow, &base);

                let mut grown = base.clone();
                grown.providers.push(ProviderSignatureSet {
                    provider: "Grown".into(),
                    control_domains: vec![format!("{extra}.example")],
                    tunnel_domains: vec![],
                    tunnel_protocol_heuristics: vec![],
                });
                let after = classify(&flow, &grown);

                if before.class != TriageClass::Relayed {
                    prop_assert_ne!(after.class, TriageClass::Relayed);
                    prop_assert_eq!(before.class, after.class);
                }
                Ok(())
            })
            .unwrap();
    }
}
