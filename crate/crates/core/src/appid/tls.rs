//! TLS record and ClientHello parsing, just deep enough to pull the SNI and
//! to validate record framing. No decryption, no certificate handling.

/// Record content types that occur in real handshakes and sessions.
const CONTENT_TYPES: std::ops::RangeInclusive<u8> = 20..=23;
/// Record-layer versions 3.1 through 3.4 (TLS 1.0 - 1.3 wire values).
const VERSIONS: std::ops::RangeInclusive<u8> = 1..=4;
/// Max record payload: 2^14 plus expansion allowance.
const MAX_RECORD: usize = 18432;

fn record_header(buf: &[u8]) -> Option<(u8, usize)> {
    if buf.len() < 5 {
        return None;
    }
    let (ctype, major, minor) = (buf[0], buf[1], buf[2]);
    if !CONTENT_TYPES.contains(&ctype) || major != 3 || !VERSIONS.contains(&minor) {
        return None;
    }
    let len = u16::from_be_bytes([buf[3], buf[4]]) as usize;
    if len == 0 || len > MAX_RECORD {
        return None;
    }
    Some((ctype, len))
}

/// Does the payload begin with a TLS handshake record carrying a ClientHello?
pub fn is_client_hello(payload: &[u8]) -> bool {
    matches!(record_header(payload), Some((22, _))) && payload.get(5) == Some(&1)
}

/// Walk the byte stream as a chain of TLS records: every complete record
/// header must be well-formed; a partial record at the tail is fine since
/// captures cut streams arbitrarily. Requires at least one complete header.
pub fn valid_record_chain(stream: &[u8]) -> bool {
    if stream.len() < 5 {
        return false;
    }
    let mut pos = 0;
    let mut records = 0;
    while pos < stream.len() {
        if stream.len() - pos < 5 {
            // Trailing partial header: accept if something parsed before it.
            return records > 0;
        }
        match record_header(&stream[pos..]) {
            Some((_, len)) => {
                records += 1;
                pos += 5 + len;
            }
            None => return false,
        }
    }
    records > 0
}

/// Extract the server name from a ClientHello at the start of an upstream
/// byte stream. Handshake bytes are reassembled across records first.
pub fn sni(stream: &[u8]) -> Option<String> {
    if !is_client_hello(stream) {
        return None;
    }
    // Concatenate consecutive handshake-record payloads.
    let mut hs: Vec<u8> = Vec::new();
    let mut pos = 0;
    while pos + 5 <= stream.len() && hs.len() < MAX_RECORD {
        let Some((ctype, len)) = record_header(&stream[pos..]) else {
            break;
        };
        if ctype != 22 {
            break;
        }
        let end = (pos + 5 + len).min(stream.len());
        hs.extend_from_slice(&stream[pos + 5..end]);
        pos = end;
    }
    parse_client_hello_sni(&hs)
}

fn parse_client_hello_sni(hs: &[u8]) -> Option<String> {
    // Handshake header: type(1) + length(3).
    if hs.len() < 4 || hs[0] != 1 {
        return None;
    }
    let mut p = 4usize;
    p += 2 + 32; // client version + random
    let session_len = *hs.get(p)? as usize;
    p += 1 + session_len;
    let cipher_len = u16::from_be_bytes([*hs.get(p)?, *hs.get(p + 1)?]) as usize;
    p += 2 + cipher_len;
    let comp_len = *hs.get(p)? as usize;
    p += 1 + comp_len;
    let ext_total = u16::from_be_bytes([*hs.get(p)?, *hs.get(p + 1)?]) as usize;
    p += 2;
    let ext_end = (p + ext_total).min(hs.len());

    while p + 4 <= ext_end {
        let ext_type = u16::from_be_bytes([hs[p], hs[p + 1]]);
        let ext_len = u16::from_be_bytes([hs[p + 2], hs[p + 3]]) as usize;
        p += 4;
        if p + ext_len > ext_end {
            return None;
        }
        if ext_type == 0 {
            return parse_server_name_list(&hs[p..p + ext_len]);
        }
        p += ext_len;
    }
    None
}

fn parse_server_name_list(ext: &[u8]) -> Option<String> {
    if ext.len() < 2 {
        return None;
    }
    let list_len = u16::from_be_bytes([ext[0], ext[1]]) as usize;
    let mut p = 2usize;
    let end = (2 + list_len).min(ext.len());
    while p + 3 <= end {
        let name_type = ext[p];
        let name_len = u16::from_be_bytes([ext[p + 1], ext[p + 2]]) as usize;
        p += 3;
        if p + name_len > end {
            return None;
        }
        if name_type == 0 {
            let raw = std::str::from_utf8(&ext[p..p + name_len]).ok()?;
            let name = raw.trim_end_matches('.').to_lowercase();
            if name.is_empty() {
                return None;
            }
            return Some(name);
        }
        p += name_len;
    }
    None
}

/// Build a syntactically valid ClientHello record with the given SNI, for
/// fixtures and tests.
pub fn build_client_hello(server_name: Option<&str>) -> Vec<u8> {
    let mut ext = Vec::new();
    if let Some(name) = server_name {
        let n = name.as_bytes();
        let mut sn = Vec::new();
        sn.extend_from_slice(&((n.len() + 3) as u16).to_be_bytes());
        sn.push(0);
        sn.extend_from_slice(&(n.len() as u16).to_be_bytes());
        sn.extend_from_slice(n);
        ext.extend_from_slice(&0u16.to_be_bytes());
        ext.extend_from_slice(&(sn.len() as u16).to_be_bytes());
        ext.extend_from_slice(&sn);
    }
    // ALPN-like filler extension so SNI is not the only one present.
    ext.extend_from_slice(&16u16.to_be_bytes());
    ext.extend_from_slice(&2u16.to_be_bytes());
    ext.extend_from_slice(&[0, 0]);

    let mut body = Vec::new();
    body.extend_from_slice(&[3, 3]); // client version
    body.extend_from_slice(&[0x5a; 32]); // random
    body.push(0); // empty session id
    body.extend_from_slice(&4u16.to_be_bytes());
    body.extend_from_slice(&[0x13, 0x01, 0x13, 0x02]); // two suites
    body.push(1);
    body.push(0); // null compression
    body.extend_from_slice(&(ext.len() as u16).to_be_bytes());
    body.extend_from_slice(&ext);

    let mut hs = vec![1];
    hs.extend_from_slice(&(body.len() as u32).to_be_bytes()[1..]);
    hs.extend_from_slice(&body);

    let mut rec = vec![22, 3, 1];
    rec.extend_from_slice(&(hs.len() as u16).to_be_bytes());
    rec.extend_from_slice(&hs);
    rec
}

/// Application-data records filled with fixed bytes, for fixtures.
pub fn build_app_records(sizes: &[usize]) -> Vec<u8> {
    let mut out = Vec::new();
    for &size in sizes {
        out.extend_from_slice(&[23, 3, 3]);
        out.extend_from_slice(&(size as u16).to_be_bytes());
        out.extend_from_slice(&vec![0xd7; size]);
    }
    out
}
