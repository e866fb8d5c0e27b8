//! End-to-end capture ingestion tests over synthetic pcap/pcapng files. The
//! generator keeps its own byte ledger, which serves as the oracle for flow
//! totals and conservation checks.

use std::net::IpAddr;

use rand::Rng;
use resipscope::capture::{ingest_capture, FlowSummary};
use resipscope::synth::{self, Frame, Ledger, TcpScript, UdpScript, FLAG_ACK, FLAG_SYN};
use resipscope::{AssemblyConfig, Direction, Endpoint, Flow, Transport};

fn ep(s: &str) -> Endpoint {
    let (ip, port) = s.rsplit_once(':').unwrap();
    Endpoint {
        ip: ip.parse().unwrap(),
        port: port.parse().unwrap(),
    }
}

fn find<'a>(flows: &'a [Flow], ledger: &Ledger) -> &'a Flow {
    flows
        .iter()
        .find(|f| {
            f.key.src == ledger.src && f.key.dst == ledger.dst && f.key.transport == ledger.transport
        })
        .unwrap_or_else(|| panic!("no flow for {:?} -> {:?}", ledger.src, ledger.dst))
}

#[test]
fn interleaved_tcp_flows_match_generator_ledger() {
    let mut rng = synth::rng(11);
    let base = 1_700_000_000.0;
    let mut scripts = Vec::new();
    let mut ledgers = Vec::new();

    for i in 0..10u32 {
        let src = ep(&format!("10.0.{}.2:{}", i, 40000 + i));
        let dst = ep(&format!("203.0.113.{}:443", i + 1));
        let mut s = TcpScript::handshake(base + i as f64 * 0.01, src, dst);
        for _ in 0..rng.random_range(2..12) {
            let up_len = rng.random_range(1..800);
            let down_len = rng.random_range(1..1400);
            s.send_up(rng.random_range(0.001..0.2), &vec![0xaa; up_len]);
            s.send_down(rng.random_range(0.001..0.2), &vec![0xbb; down_len]);
        }
        s.close(0.01);
        let (frames, ledger) = s.finish();
        scripts.push(frames);
        ledgers.push(ledger);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ten.pcap");
    synth::write_pcap(&path, &synth::interleave(scripts)).unwrap();

    let ingest = ingest_capture(&path, &AssemblyConfig::default()).unwrap();
    assert_eq!(ingest.flows.len(), 10);

    let mut total_expected = 0u64;
    for ledger in &ledgers {
        let flow = find(&ingest.flows, ledger);
        assert_eq!(flow.up_bytes, ledger.up_bytes);
        assert_eq!(flow.down_bytes, ledger.down_bytes);
        assert_eq!(flow.up_packets, ledger.up_packets);
        assert_eq!(flow.down_packets, ledger.down_packets);
        assert_eq!(flow.fp_all(), ledger.up_packets + ledger.down_packets);
        total_expected += ledger.up_bytes + ledger.down_bytes;
    }
    let total: u64 = ingest.flows.iter().map(Flow::total_bytes).sum();
    assert_eq!(total, total_expected);
    assert_eq!(ingest.counters.truncated, 0);
}

#[test]
fn handshake_and_two_data_packets_each_way() {
    let mut s = TcpScript::handshake(100.0, ep("10.0.0.2:50000"), ep("198.51.100.1:80"));
    s.send_up(0.01, b"GET / HTTP/1.1\r\n");
    s.send_down(0.01, b"HTTP/1.1 200 OK\r\n");
    s.send_up(0.01, b"more");
    s.send_down(0.01, b"body");
    s.close(0.01);
    let (frames, _) = s.finish();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hs.pcap");
    synth::write_pcap(&path, &frames).unwrap();

    // Payload-only assembly: pure ACK/SYN/FIN packets do not count.
    let ingest = ingest_capture(&path, &AssemblyConfig::default()).unwrap();
    assert_eq!(ingest.flows.len(), 1);
    let flow = &ingest.flows[0];
    assert_eq!((flow.up_packets, flow.down_packets), (2, 2));

    // With zero-payload packets recorded, the handshake and teardown appear.
    let all = ingest_capture(
        &path,
        &AssemblyConfig {
            payload_only: false,
            ..AssemblyConfig::default()
        },
    )
    .unwrap();
    let flow = &all.flows[0];
    assert_eq!((flow.up_packets, flow.down_packets), (6, 4));
    assert_eq!(flow.up_bytes, 20);
    assert_eq!(flow.down_bytes, 21);
}

#[test]
fn dns_response_populates_map() {
    let client = ep("10.0.0.2:33000");
    let server = ep("9.9.9.9:53");
    let mut s = UdpScript::new(50.0, client, server);
    s.send_up(0.0, b"\x12\x34\x01\x00\x00\x01\x00\x00\x00\x00\x00\x00\x07example\x03com\x00\x00\x01\x00\x01");
    let payload = synth::dns_response(
        0x1234,
        "example.com",
        &[],
        &[("example.com", "93.184.216.34".parse().unwrap())],
    );
    s.send_down(0.02, &payload);
    let (frames, _) = s.finish();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dns.pcap");
    synth::write_pcap(&path, &frames).unwrap();

    let ingest = ingest_capture(&path, &AssemblyConfig::default()).unwrap();
    let ip: IpAddr = "93.184.216.34".parse().unwrap();
    assert_eq!(ingest.dns.lookup_unique(ip), Some("example.com"));
    assert_eq!(ingest.counters.dns_responses, 1);
}

#[test]
fn pcap_and_pcapng_yield_identical_flows() {
    let mut s = TcpScript::handshake(1_700_000_000.25, ep("10.1.1.2:41000"), ep("203.0.113.7:8443"));
    s.send_up(0.013, &[1; 37]);
    s.send_down(0.009, &[2; 512]);
    s.send_up(0.21, &[3; 4]);
    s.close(0.05);
    let (frames, _) = s.finish();

    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("x.pcap");
    let b = dir.path().join("x.pcapng");
    synth::write_pcap(&a, &frames).unwrap();
    synth::write_pcapng(&b, &frames).unwrap();

    let ia = ingest_capture(&a, &AssemblyConfig::default()).unwrap();
    let ib = ingest_capture(&b, &AssemblyConfig::default()).unwrap();

    let sa: Vec<String> = ia
        .flows
        .iter()
        .enumerate()
        .map(|(i, f)| serde_json::to_string(&FlowSummary::of(i as u64, f)).unwrap())
        .collect();
    let sb: Vec<String> = ib
        .flows
        .iter()
        .enumerate()
        .map(|(i, f)| serde_json::to_string(&FlowSummary::of(i as u64, f)).unwrap())
        .collect();
    assert_eq!(sa, sb);
}

#[test]
fn nanosecond_pcap_timestamps_survive() {
    let mut s = UdpScript::new(1_700_000_000.000123, ep("10.0.0.2:5000"), ep("10.0.0.3:7000"));
    s.send_up(0.0, b"a");
    let (frames, _) = s.finish();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ns.pcap");
    synth::write_pcap_nanos(&path, &frames).unwrap();

    let ingest = ingest_capture(&path, &AssemblyConfig::default()).unwrap();
    assert!((ingest.flows[0].first_ts - 1_700_000_000.000123).abs() < 1e-5);
}

#[test]
fn idle_gap_splits_conversation() {
    let src = ep("10.0.0.2:45000");
    let dst = ep("198.51.100.9:9000");
    let mut s = TcpScript::handshake(10.0, src, dst);
    s.send_up(0.1, b"one");
    s.send_down(0.1, b"two");
    s.send_up(400.0, b"three"); // beyond the 300 s default idle timeout
    s.send_down(0.1, b"four");
    let (frames, _) = s.finish();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("idle.pcap");
    synth::write_pcap(&path, &frames).unwrap();

    let cfg = AssemblyConfig::default();
    let ingest = ingest_capture(&path, &cfg).unwrap();
    assert_eq!(ingest.flows.len(), 2);
    for flow in &ingest.flows {
        for pair in flow.packets.windows(2) {
            assert!(pair[1].timestamp - pair[0].timestamp <= cfg.idle_timeout);
        }
    }
    // Both halves keep the same orientation here: the second begins with an
    // upstream data packet from the original initiator.
    assert_eq!(ingest.flows[0].key.src, src);
    assert_eq!(ingest.flows[1].key.src, src);
    assert_eq!(ingest.flows[0].up_bytes, 3);
    assert_eq!(ingest.flows[1].up_bytes, 5);
}

#[test]
fn capture_starting_at_syn_ack_orients_to_receiver() {
    let client = ep("10.0.0.2:46000");
    let server = ep("203.0.113.5:443");
    let frames = vec![
        Frame {
            ts: 5.0,
            data: synth::tcp_frame(server, client, 9000, 501, FLAG_SYN | FLAG_ACK, &[]),
        },
        Frame {
            ts: 5.001,
            data: synth::tcp_frame(client, server, 501, 9001, FLAG_ACK, b"hello"),
        },
        Frame {
            ts: 5.002,
            data: synth::tcp_frame(server, client, 9001, 506, FLAG_ACK, b"world!"),
        },
    ];

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synack.pcap");
    synth::write_pcap(&path, &frames).unwrap();

    let ingest = ingest_capture(&path, &AssemblyConfig::default()).unwrap();
    assert_eq!(ingest.flows.len(), 1);
    let flow = &ingest.flows[0];
    assert_eq!(flow.key.src, client);
    assert_eq!(flow.key.dst, server);
    assert_eq!(flow.up_bytes, 5);
    assert_eq!(flow.down_bytes, 6);
}

#[test]
fn backwards_timestamps_are_clamped() {
    let src = ep("10.0.0.2:47000");
    let dst = ep("203.0.113.5:80");
    let frames = vec![
        Frame {
            ts: 20.0,
            data: synth::tcp_frame(src, dst, 100, 0, FLAG_ACK, b"aa"),
        },
        Frame {
            ts: 19.5,
            data: synth::tcp_frame(src, dst, 102, 0, FLAG_ACK, b"bb"),
        },
    ];

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("skew.pcap");
    synth::write_pcap(&path, &frames).unwrap();

    let ingest = ingest_capture(&path, &AssemblyConfig::default()).unwrap();
    assert_eq!(ingest.counters.clock_skew, 1);
    let flow = &ingest.flows[0];
    assert_eq!(flow.packets[0].timestamp, 20.0);
    assert_eq!(flow.packets[1].timestamp, 20.0);
}

#[test]
fn junk_frames_are_counted_not_fatal() {
    let good = synth::tcp_frame(ep("10.0.0.2:48000"), ep("203.0.113.5:80"), 1, 0, FLAG_ACK, b"ok");
    let frames = vec![
        Frame {
            ts: 1.0,
            data: synth::arp_frame(),
        },
        Frame {
            ts: 1.1,
            data: good[..24].to_vec(), // mid-IPv4-header cut
        },
        Frame {
            ts: 1.2,
            data: good,
        },
    ];

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.pcap");
    synth::write_pcap(&path, &frames).unwrap();

    let ingest = ingest_capture(&path, &AssemblyConfig::default()).unwrap();
    assert_eq!(ingest.counters.frames, 3);
    assert_eq!(ingest.counters.non_ip, 1);
    assert_eq!(ingest.counters.truncated, 1);
    assert_eq!(ingest.flows.len(), 1);
}

#[test]
fn ingest_is_deterministic() {
    let mut rng = synth::rng(7);
    let mut scripts = Vec::new();
    for i in 0..5u32 {
        let mut s = UdpScript::new(
            2.0 + i as f64 * 0.001,
            ep(&format!("10.0.0.{}:400{}", i + 2, i)),
            ep("203.0.113.50:5353"),
        );
        for _ in 0..rng.random_range(1..6) {
            s.send_up(0.01, &vec![7; rng.random_range(1..100)]);
        }
        scripts.push(s.finish().0);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("det.pcap");
    synth::write_pcap(&path, &synth::interleave(scripts)).unwrap();

    let a = ingest_capture(&path, &AssemblyConfig::default()).unwrap();
    let b = ingest_capture(&path, &AssemblyConfig::default()).unwrap();
    assert_eq!(format!("{:?}", a.flows), format!("{:?}", b.flows));
    assert_eq!(format!("{:?}", a.dns), format!("{:?}", b.dns));
}

#[test]
fn out_of_order_tcp_segments_reassemble_by_seq() {
    let src = ep("10.0.0.2:49000");
    let dst = ep("203.0.113.5:80");
    // Segments arrive BBB, AAA but seq says AAA first.
    let frames = vec![
        Frame {
            ts: 3.0,
            data: synth::tcp_frame(src, dst, 2000, 0, FLAG_ACK, b"BBB"),
        },
        Frame {
            ts: 3.01,
            data: synth::tcp_frame(src, dst, 1997, 0, FLAG_ACK, b"AAA"),
        },
    ];

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ooo.pcap");
    synth::write_pcap(&path, &frames).unwrap();

    let ingest = ingest_capture(&path, &AssemblyConfig::default()).unwrap();
    let flow = &ingest.flows[0];
    assert_eq!(flow.payload_stream(Direction::Up, 64), b"AAABBB");
    // The packet series itself keeps wire order for timing features.
    assert_eq!(flow.packets[0].payload, b"BBB");
}

#[test]
fn zero_payload_flow_still_assembled() {
    let frames = vec![Frame {
        ts: 9.0,
        data: synth::tcp_frame(ep("10.0.0.2:50001"), ep("203.0.113.5:23"), 1, 0, FLAG_SYN, &[]),
    }];

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("syn.pcap");
    synth::write_pcap(&path, &frames).unwrap();

    let ingest = ingest_capture(&path, &AssemblyConfig::default()).unwrap();
    assert_eq!(ingest.flows.len(), 1);
    let flow = &ingest.flows[0];
    assert_eq!(flow.fp_all(), 0);
    assert_eq!(flow.key.transport, Transport::Tcp);
    assert_eq!(flow.total_bytes(), 0);
}

#[test]
fn unreadable_file_is_io_error() {
    let err = ingest_capture(
        std::path::Path::new("/nonexistent/capture.pcap"),
        &AssemblyConfig::default(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("cannot read capture"));
}

#[test]
fn garbage_file_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("garbage.pcap");
    std::fs::write(&path, b"this is not a capture at all").unwrap();
    assert!(ingest_capture(&path, &AssemblyConfig::default()).is_err());
}
