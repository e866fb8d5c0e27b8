//! Crafted capture fixtures with recorded ground truth: a triage exercise
//! capture, an engineered protocol-mix corpus, and a small demonstration
//! capture that gives every analysis stage something to report on.

use std::net::IpAddr;

use crate::appid::tls;
use crate::appid::{Evidence, Protocol, ProtocolTag};
use crate::capture::{Direction, Endpoint, Flow, Transport};
use crate::triage::TriageClass;

use super::wire::{dns_response, udp_frame, Frame, TcpScript, UdpScript};
use super::{endpoint, interleave, make_flow};

/// The exit-node address every fixture capture is taken from.
pub const NODE_IP: &str = "192.0.2.10";

/// Ground truth for one flow in the triage fixture.
#[derive(Debug, Clone)]
pub struct TriageExpectation {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub transport: Transport,
    pub class: TriageClass,
    pub provider: Option<&'static str>,
    /// Plaintext-protocol flows double as the headerless-TLS
    /// false-positive check set.
    pub plaintext: bool,
}

pub struct TriageFixture {
    pub frames: Vec<Frame>,
    pub expected: Vec<TriageExpectation>,
}

fn node(port: u16) -> Endpoint {
    endpoint(&format!("{NODE_IP}:{port}"))
}

/// One type-22 record (a server flight stand-in) followed by app records.
fn tls_server_flight(handshake_len: usize, app: &[usize]) -> Vec<u8> {
    let mut out = vec![22, 3, 3];
    out.extend_from_slice(&(handshake_len as u16).to_be_bytes());
    out.extend_from_slice(&vec![0x02; handshake_len]);
    out.extend_from_slice(&tls::build_app_records(app));
    out
}

/// TLS session opened with a ClientHello (optionally carrying an SNI).
fn tls_session(start: f64, src: Endpoint, dst: Endpoint, sni: Option<&str>) -> Vec<Frame> {
    let mut s = TcpScript::handshake(start, src, dst);
    s.send_up(0.01, &tls::build_client_hello(sni));
    s.send_down(0.04, &tls_server_flight(120, &[160]));
    s.send_up(0.02, &tls::build_app_records(&[300]));
    s.send_down(0.08, &tls::build_app_records(&[900, 700]));
    s.send_up(0.5, &tls::build_app_records(&[240]));
    s.send_down(0.1, &tls::build_app_records(&[1100]));
    s.close(0.2);
    s.finish().0
}

/// TLS records in both directions with no handshake anywhere, as a capture
/// that started mid-tunnel would look.
fn headerless_session(start: f64, src: Endpoint, dst: Endpoint) -> Vec<Frame> {
    let mut s = TcpScript::mid_stream(start, src, dst);
    s.send_up(0.01, &tls::build_app_records(&[400]));
    s.send_down(0.05, &tls::build_app_records(&[1200, 300]));
    s.send_up(0.3, &tls::build_app_records(&[520]));
    s.send_down(0.07, &tls::build_app_records(&[1400]));
    s.send_up(0.4, &tls::build_app_records(&[90]));
    s.send_down(0.02, &tls::build_app_records(&[640]));
    s.finish().0
}

fn http_session(start: f64, src: Endpoint, dst: Endpoint, host: &str, path: &str) -> Vec<Frame> {
    let mut s = TcpScript::handshake(start, src, dst);
    let request = format!(
        "GET {path} HTTP/1.1\r\nHost: {host}\r\nUser-Agent: fetch/1.1\r\nAccept: */*\r\n\r\n"
    );
    s.send_up(0.01, request.as_bytes());
    let body = "<html><body>ok</body></html>";
    let reply = format!(
        "HTTP/1.1 200 OK\r\nContent-Type: text/html\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    );
    s.send_down(0.06, reply.as_bytes());
    s.close(0.1);
    s.finish().0
}

fn dialogue_session(
    start: f64,
    src: Endpoint,
    dst: Endpoint,
    lines: &[(Direction, &str)],
) -> Vec<Frame> {
    let mut s = TcpScript::handshake(start, src, dst);
    for (dir, text) in lines {
        s.send(*dir, 0.05, format!("{text}\r\n").as_bytes());
    }
    s.close(0.1);
    s.finish().0
}

fn smtp_exchange(start: f64, src: Endpoint, dst: Endpoint, accept: bool) -> Vec<Frame> {
    use Direction::{Down, Up};
    let verdict = if accept {
        "250 2.0.0 queued as A1B2C3"
    } else {
        "550 5.7.1 message rejected as spam"
    };
    dialogue_session(
        start,
        src,
        dst,
        &[
            (Down, "220 mx.fixture.example ESMTP ready"),
            (Up, "EHLO relay.client.example"),
            (Down, "250-mx.fixture.example\r\n250 SIZE 10485760"),
            (Up, "MAIL FROM:<news@client.example>"),
            (Down, "250 2.1.0 ok"),
            (Up, "RCPT TO:<user@fixture.example>"),
            (Down, "250 2.1.5 ok"),
            (Up, "DATA"),
            (Down, "354 go ahead"),
            (Up, "Subject: weekly digest\r\n\r\nplain fixture body\r\n."),
            (Down, verdict),
            (Up, "QUIT"),
            (Down, "221 bye"),
        ],
    )
}

fn pop3_exchange(start: f64, src: Endpoint, dst: Endpoint, user: &str) -> Vec<Frame> {
    use Direction::{Down, Up};
    dialogue_session(
        start,
        src,
        dst,
        &[
            (Down, "+OK pop.fixture.example ready"),
            (Up, &format!("USER {user}")),
            (Down, "+OK"),
            (Up, "PASS fixture-secret"),
            (Down, "+OK logged in"),
            (Up, "STAT"),
            (Down, "+OK 1 320"),
            (Up, "RETR 1"),
            (Down, "+OK 320 octets\r\nSubject: hello\r\n\r\nshort message\r\n."),
            (Up, "QUIT"),
            (Down, "+OK bye"),
        ],
    )
}

fn imap_exchange(start: f64, src: Endpoint, dst: Endpoint, user: &str) -> Vec<Frame> {
    use Direction::{Down, Up};
    dialogue_session(
        start,
        src,
        dst,
        &[
            (Down, "* OK imap.fixture.example ready"),
            (Up, &format!("a1 LOGIN \"{user}\" \"fixture-secret\"")),
            (Down, "a1 OK LOGIN completed"),
            (Up, "a2 SELECT INBOX"),
            (Down, "* 1 EXISTS\r\na2 OK [READ-WRITE] SELECT completed"),
            (Up, "a3 FETCH 1 (BODY[])"),
            (Down, "* 1 FETCH (BODY[] {24}\r\nSubject: x\r\n\r\nfetched\r\n)\r\na3 OK FETCH completed"),
            (Up, "a4 LOGOUT"),
            (Down, "* BYE\r\na4 OK LOGOUT completed"),
        ],
    )
}

/// Minimal DNS query message; only the header shape matters to fixtures.
fn dns_query(txid: u16, name: &str) -> Vec<u8> {
    let mut m = Vec::new();
    m.extend_from_slice(&txid.to_be_bytes());
    m.extend_from_slice(&[0x01, 0x00]); // RD
    m.extend_from_slice(&[0, 1, 0, 0, 0, 0, 0, 0]);
    for label in name.split('.').filter(|l| !l.is_empty()) {
        m.push(label.len() as u8);
        m.extend_from_slice(label.as_bytes());
    }
    m.push(0);
    m.extend_from_slice(&[0, 1, 0, 1]);
    m
}

fn dns_exchange(start: f64, src: Endpoint, resolver: Endpoint, name: &str, addr: &str) -> Vec<Frame> {
    let mut s = UdpScript::new(start, src, resolver);
    s.send_up(0.0, &dns_query(0x0b07, name));
    s.send_down(0.02, &dns_response(0x0b07, name, &[], &[(name, addr.parse().unwrap())]));
    s.finish().0
}

/// A capture holding one provider-signature tunnel, one provider-signature
/// control flow, one headerless TLS tunnel, and twenty plaintext relayed
/// flows across seven protocols. The expectations list one entry per flow.
pub fn triage_fixture() -> TriageFixture {
    let mut scripts: Vec<Vec<Frame>> = Vec::new();
    let mut expected = Vec::new();
    let mut push = |frames: Vec<Frame>,
                    src: Endpoint,
                    dst: Endpoint,
                    transport: Transport,
                    class: TriageClass,
                    provider: Option<&'static str>,
                    plaintext: bool| {
        scripts.push(frames);
        expected.push(TriageExpectation { src, dst, transport, class, provider, plaintext });
    };

    let tunnel_dst = endpoint("203.0.113.10:443");
    push(
        tls_session(100.0, node(41000), tunnel_dst, Some("proxy.packetstream.io")),
        node(41000),
        tunnel_dst,
        Transport::Tcp,
        TriageClass::Tunnel,
        Some("PacketStream"),
        false,
    );

    let control_dst = endpoint("203.0.113.20:443");
    push(
        tls_session(102.0, node(41001), control_dst, Some("api.iproyal.com")),
        node(41001),
        control_dst,
        Transport::Tcp,
        TriageClass::Control,
        Some("IPRoyal"),
        false,
    );

    let headerless_dst = endpoint("203.0.113.30:8443");
    push(
        headerless_session(104.0, node(41002), headerless_dst),
        node(41002),
        headerless_dst,
        Transport::Tcp,
        TriageClass::Tunnel,
        Some("IPRoyal"),
        false,
    );

    let mut t = 110.0;
    let mut relayed = |frames: Vec<Frame>, src: Endpoint, dst: Endpoint, transport: Transport| {
        scripts.push(frames);
        expected.push(TriageExpectation {
            src,
            dst,
            transport,
            class: TriageClass::Relayed,
            provider: None,
            plaintext: true,
        });
    };

    for k in 0..8u16 {
        let src = node(42000 + k);
        let dst = endpoint(&format!("198.51.100.{}:80", 40 + k));
        relayed(
            http_session(t, src, dst, &format!("shop{k}.example"), &format!("/catalog/{k}")),
            src,
            dst,
            Transport::Tcp,
        );
        t += 2.0;
    }
    for k in 0..3u16 {
        let src = node(42100 + k);
        let dst = endpoint(&format!("198.51.100.{}:25", 50 + k));
        relayed(smtp_exchange(t, src, dst, k != 2), src, dst, Transport::Tcp);
        t += 2.0;
    }
    for k in 0..2u16 {
        let src = node(42200 + k);
        let dst = endpoint(&format!("198.51.100.{}:110", 54 + k));
        relayed(pop3_exchange(t, src, dst, &format!("box{k}")), src, dst, Transport::Tcp);
        t += 2.0;
    }
    for k in 0..2u16 {
        let src = node(42300 + k);
        let dst = endpoint(&format!("198.51.100.{}:143", 57 + k));
        relayed(imap_exchange(t, src, dst, &format!("crate{k}")), src, dst, Transport::Tcp);
        t += 2.0;
    }

    let ftp_src = node(42400);
    let ftp_dst = endpoint("198.51.100.60:21");
    relayed(
        dialogue_session(
            t,
            ftp_src,
            ftp_dst,
            &[
                (Direction::Down, "220 ftp.fixture.example ready"),
                (Direction::Up, "USER anonymous"),
                (Direction::Down, "331 send password"),
                (Direction::Up, "PASS guest@"),
                (Direction::Down, "530 login incorrect"),
            ],
        ),
        ftp_src,
        ftp_dst,
        Transport::Tcp,
    );
    t += 2.0;

    let ssh_src = node(42401);
    let ssh_dst = endpoint("198.51.100.61:22");
    let mut ssh = TcpScript::handshake(t, ssh_src, ssh_dst);
    ssh.send_down(0.01, b"SSH-2.0-OpenSSH_9.6\r\n");
    ssh.send_up(0.01, b"SSH-2.0-fixturessh_1.0\r\n");
    // Binary packets: a four-byte length prefix never resembles a TLS record.
    ssh.send_up(0.05, &[0x00, 0x00, 0x01, 0x04, 0x0a, 0x14, 0x11, 0x22]);
    ssh.send_down(0.05, &[0x00, 0x00, 0x00, 0x8c, 0x05, 0x14, 0x33, 0x44]);
    relayed(ssh.finish().0, ssh_src, ssh_dst, Transport::Tcp);
    t += 2.0;

    for k in 0..2u16 {
        let src = node(42500 + k);
        let resolver = endpoint(&format!("198.51.100.{}:53", 62 + k));
        relayed(
            dns_exchange(t, src, resolver, &format!("cdn{k}.lookup.example"), "198.51.100.200"),
            src,
            resolver,
            Transport::Udp,
        );
        t += 2.0;
    }

    let ssdp_src = node(42600);
    let ssdp_dst = endpoint("239.255.255.250:1900");
    let notify = b"NOTIFY * HTTP/1.1\r\nHOST: 239.255.255.250:1900\r\nNT: upnp:rootdevice\r\n\r\n";
    relayed(
        vec![Frame { ts: t, data: udp_frame(ssdp_src, ssdp_dst, notify) }],
        ssdp_src,
        ssdp_dst,
        Transport::Udp,
    );

    TriageFixture { frames: interleave(scripts), expected }
}

/// Expected protocol-mix rows: service name, flow share, volume share. Both
/// columns are engineered to land on exact two-decimal percentages.
pub const MIX_EXPECTED: [(&str, f64, f64); 6] = [
    ("HTTP", 5.00, 0.80),
    ("HTTPS", 92.17, 98.63),
    ("SMTP", 1.50, 0.30),
    ("DNS", 0.80, 0.12),
    ("Other", 0.33, 0.10),
    ("Unknown", 0.20, 0.05),
];

/// 10000 tagged flows totalling exactly one megabyte of payload, split so
/// every class share in `MIX_EXPECTED` is exact: 9217 HTTPS flows carrying
/// 986300 bytes, and so on.
pub fn protocol_mix_corpus() -> (Vec<Flow>, Vec<ProtocolTag>) {
    let plan: [(Protocol, u64, u64); 6] = [
        (Protocol::Http, 500, 8_000),
        (Protocol::Https, 9_217, 986_300),
        (Protocol::Smtp, 150, 3_000),
        (Protocol::Dns, 80, 1_200),
        (Protocol::Other, 33, 1_000),
        (Protocol::Unknown, 20, 500),
    ];
    let mut flows = Vec::with_capacity(10_000);
    let mut tags = Vec::with_capacity(10_000);
    let mut n = 0u64;
    for (protocol, count, bytes) in plan {
        let base = bytes / count;
        let extra = bytes % count;
        for k in 0..count {
            let size = base + u64::from(k < extra);
            let payload = vec![0x42u8; size as usize];
            let src = endpoint(&format!("10.{}.{}.9:40000", n / 62_500, (n / 250) % 250));
            let dst = endpoint(&format!("203.0.113.{}:443", n % 254 + 1));
            flows.push(make_flow(
                Transport::Tcp,
                src,
                dst,
                n as f64,
                &[(Direction::Up, 0.0, &payload)],
            ));
            tags.push(ProtocolTag { protocol, evidence: Evidence::PayloadParse });
            n += 1;
        }
    }
    (flows, tags)
}

/// The bundled demonstration capture: a few minutes at one fictional exit
/// node, touching every analysis stage. Control and tunnel flows for two
/// providers, relayed web traffic with SNI, Host, and DNS-derived names, a
/// government destination, an off-port opaque service, two SMTP deliveries
/// (one rejected by a blocklist), and one POP3 retrieval.
pub fn demo_capture_frames() -> Vec<Frame> {
    let mut scripts: Vec<Vec<Frame>> = Vec::new();

    scripts.push(tls_session(1000.0, node(51000), endpoint("203.0.113.20:443"), Some("api.iproyal.com")));
    scripts.push(tls_session(1004.0, node(51001), endpoint("203.0.113.10:443"), Some("proxy.packetstream.io")));
    scripts.push(headerless_session(1008.0, node(51002), endpoint("203.0.113.30:8443")));

    // A resolver answer gives the SNI-less HTTPS flow below its name.
    let resolver = endpoint("198.51.100.53:53");
    let cdn_ip: IpAddr = "198.51.100.60".parse().unwrap();
    let mut dns = UdpScript::new(1012.0, node(51003), resolver);
    dns.send_up(0.0, &dns_query(0x4a01, "cdn.shop-photos.example"));
    dns.send_down(0.02, &dns_response(0x4a01, "cdn.shop-photos.example", &[], &[("cdn.shop-photos.example", cdn_ip)]));
    scripts.push(dns.finish().0);
    scripts.push(tls_session(1013.0, node(51004), endpoint("198.51.100.60:443"), None));

    scripts.push(tls_session(1020.0, node(51005), endpoint("198.51.100.44:443"), Some("www.amazon.com")));
    scripts.push(http_session(1030.0, node(51006), endpoint("198.51.100.80:80"), "shop.example", "/a?b=1"));
    scripts.push(tls_session(1040.0, node(51007), endpoint("198.51.100.70:443"), Some("reemployct.dol.ct.gov")));

    // Opaque service on an unassigned port: no FQDN, not a web protocol.
    let mut opaque = TcpScript::handshake(1050.0, node(51008), endpoint("198.51.100.99:8444"));
    opaque.send_up(0.01, &[0x00, 0x10, 0x7f, 0x7f, 0x01, 0x02, 0x03, 0x04]);
    opaque.send_down(0.05, &[0x00, 0x40, 0x7f, 0x7f, 0xaa, 0xbb]);
    opaque.send_up(0.2, &[0x00, 0x08, 0x7f, 0x7f]);
    scripts.push(opaque.finish().0);

    use Direction::{Down, Up};
    scripts.push(dialogue_session(
        1060.0,
        node(51009),
        endpoint("198.51.100.25:25"),
        &[
            (Down, "220 mx.bulkmail.example ESMTP"),
            (Up, "EHLO node.residential.example"),
            (Down, "250 mx.bulkmail.example"),
            (Up, "MAIL FROM:<deals@offers.example>"),
            (Down, "250 ok"),
            (Up, "RCPT TO:<customer@bulkmail.example>"),
            (Down, "250 ok"),
            (Up, "DATA"),
            (Down, "354 end with ."),
            (Up, "Subject: sale\r\n\r\nLIMITED time 29% offer, click fast\r\n."),
            (Down, "250 2.0.0 accepted"),
            (Up, "QUIT"),
            (Down, "221 bye"),
        ],
    ));
    scripts.push(dialogue_session(
        1070.0,
        node(51010),
        endpoint("198.51.100.26:25"),
        &[
            (Down, "220 mx.strictmail.example ESMTP"),
            (Up, "EHLO node.residential.example"),
            (Down, "250 mx.strictmail.example"),
            (Up, "MAIL FROM:<deals@offers.example>"),
            (Down, "250 ok"),
            (Up, "RCPT TO:<victim@strictmail.example>"),
            (Down, "250 ok"),
            (Up, "DATA"),
            (Down, "354 end with ."),
            (Up, "Subject: sale\r\n\r\nsecond copy of the offer\r\n."),
            (Down, "554 5.7.1 your host is listed at dnsbl.example; part of their network is on our block list"),
            (Up, "QUIT"),
            (Down, "221 bye"),
        ],
    ));
    scripts.push(pop3_exchange(1080.0, node(51011), endpoint("198.51.100.27:110"), "harvested.account"));

    interleave(scripts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::appid::{extract_destination, identify_protocol, AppidConfig, SuffixList};
    use crate::capture::{ingest_capture, AssemblyConfig};
    use crate::synth::write_pcap;
    use crate::triage::{classify_flow, detect_headerless_tls, SignatureConfig};

    #[test]
    fn triage_fixture_classifies_every_flow_as_planned() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("triage.pcap");
        let fixture = triage_fixture();
        write_pcap(&path, &fixture.frames).unwrap();

        let ingest = ingest_capture(&path, &AssemblyConfig::default()).unwrap();
        assert_eq!(ingest.counters.truncated, 0);
        assert_eq!(ingest.flows.len(), fixture.expected.len());

        let sigs = SignatureConfig::bundled();
        let appid_cfg = AppidConfig::default();
        let mut plaintext_checked = 0;
        for want in &fixture.expected {
            let flow = ingest
                .flows
                .iter()
                .find(|f| f.key.src == want.src && f.key.dst == want.dst)
                .unwrap_or_else(|| panic!("missing flow to {:?}", want.dst));
            let tag = identify_protocol(flow, &appid_cfg);
            let dest = extract_destination(flow, tag, &ingest.dns, SuffixList::bundled());
            let got = classify_flow(flow, &dest, &sigs);
            assert_eq!(got.class, want.class, "flow to {:?}", want.dst);
            assert_eq!(got.provider.as_deref(), want.provider, "flow to {:?}", want.dst);
            if want.plaintext {
                plaintext_checked += 1;
                assert!(!detect_headerless_tls(flow), "false positive on {:?}", want.dst);
            }
        }
        assert!(plaintext_checked >= 20);
    }

    #[test]
    fn mix_corpus_reproduces_engineered_shares() {
        let (flows, tags) = protocol_mix_corpus();
        assert_eq!(flows.len(), 10_000);
        let total: u64 = flows.iter().map(|f| f.total_bytes()).sum();
        assert_eq!(total, 1_000_000);

        let rows = crate::appid::protocol_mix_report(&flows, &tags);
        assert_eq!(rows.len(), MIX_EXPECTED.len());
        for (service, flows_pct, volume_pct) in MIX_EXPECTED {
            let row = rows.iter().find(|r| r.service == service).unwrap();
            assert_eq!(row.flows_pct, flows_pct, "{service} flow share");
            assert_eq!(row.volume_pct, volume_pct, "{service} volume share");
        }
        let fsum: f64 = rows.iter().map(|r| r.flows_pct).sum();
        let vsum: f64 = rows.iter().map(|r| r.volume_pct).sum();
        assert!((fsum - 100.0).abs() < 0.05);
        assert!((vsum - 100.0).abs() < 0.05);
    }

    #[test]
    fn demo_capture_ingests_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demo.pcap");
        write_pcap(&path, &demo_capture_frames()).unwrap();
        let ingest = ingest_capture(&path, &AssemblyConfig::default()).unwrap();
        assert_eq!(ingest.counters.truncated, 0);
        assert_eq!(ingest.flows.len(), 12);
        // The resolver answer must land in the DNS map for the SNI-less flow.
        assert_eq!(
            ingest.dns.lookup_unique("198.51.100.60".parse().unwrap()),
            Some("cdn.shop-photos.example")
        );
    }
}
