//! Thin reader over pcap and pcapng containers. Yields raw frames with a
//! float timestamp and the capture link type; decoding is left to [`link`].
//!
//! [`link`]: super::link

use std::fs::File;
use std::path::Path;

use pcap_parser::pcapng::build_ts_f64;
use pcap_parser::{create_reader, Block, PcapBlockOwned, PcapError};

use super::CaptureError;

pub(super) struct RawFrame<'a> {
    pub ts: f64,
    pub linktype: i32,
    pub data: &'a [u8],
}

struct InterfaceInfo {
    linktype: i32,
    ts_offset: u64,
    /// Units per second.
    ts_resolution: u64,
}

pub(super) fn for_each_frame<F>(path: &Path, mut f: F) -> Result<(), CaptureError>
where
    F: FnMut(RawFrame<'_>),
{
    let file = File::open(path).map_err(|source| CaptureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = create_reader(1 << 16, file).map_err(|e| match e {
        PcapError::Eof => CaptureError::BadFormat(format!("{}: empty file", path.display())),
        _ => CaptureError::BadFormat(path.display().to_string()),
    })?;

    // Legacy pcap state.
    let mut legacy_linktype: i32 = 1;
    let mut legacy_nanos = false;
    // pcapng per-section interface table.
    let mut interfaces: Vec<InterfaceInfo> = Vec::new();

    loop {
        match reader.next() {
            Ok((used, block)) => {
                match block {
                    PcapBlockOwned::LegacyHeader(hdr) => {
                        legacy_linktype = hdr.network.0;
                        legacy_nanos = hdr.is_nanosecond_precision();
                    }
                    PcapBlockOwned::Legacy(rec) => {
                        let frac_unit = if legacy_nanos { 1e9 } else { 1e6 };
                        let ts = rec.ts_sec as f64 + rec.ts_usec as f64 / frac_unit;
                        f(RawFrame {
                            ts,
                            linktype: legacy_linktype,
                            data: rec.data,
                        });
                    }
                    PcapBlockOwned::NG(Block::SectionHeader(_)) => interfaces.clear(),
                    PcapBlockOwned::NG(Block::InterfaceDescription(idb)) => {
                        interfaces.push(InterfaceInfo {
                            linktype: idb.linktype.0,
                            ts_offset: idb.if_tsoffset.max(0) as u64,
                            ts_resolution: idb.ts_resolution().unwrap_or(1_000_000),
                        });
                    }
                    PcapBlockOwned::NG(Block::EnhancedPacket(epb)) => {
                        let info = interfaces.get(epb.if_id as usize);
                        let (linktype, offset, resol) = match info {
                            Some(i) => (i.linktype, i.ts_offset, i.ts_resolution),
                            None => (1, 0, 1_000_000),
                        };
                        let ts = build_ts_f64(epb.ts_high, epb.ts_low, offset, resol);
                        let caplen = (epb.caplen as usize).min(epb.data.len());
                        f(RawFrame {
                            ts,
                            linktype,
                            data: &epb.data[..caplen],
                        });
                    }
                    PcapBlockOwned::NG(Block::SimplePacket(spb)) => {
                        // Simple packet blocks carry no timestamp.
                        let linktype = interfaces.first().map(|i| i.linktype).unwrap_or(1);
                        f(RawFrame {
                            ts: 0.0,
                            linktype,
                            data: spb.data,
                        });
                    }
                    PcapBlockOwned::NG(_) => {}
                }
                reader.consume(used);
            }
            Err(PcapError::Eof) => break,
            Err(PcapError::Incomplete(_)) => {
                reader.refill().map_err(|e| CaptureError::Parse {
                    path: path.display().to_string(),
                    detail: e.to_string(),
                })?;
            }
            Err(e) => {
                return Err(CaptureError::Parse {
                    path: path.display().to_string(),
                    detail: e.to_string(),
                })
            }
        }
    }
    Ok(())
}
