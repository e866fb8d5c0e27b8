//! Minimal HTTP/1.x request parsing: request line plus headers, enough to
//! recover Host values and build URLs. Bodies are never interpreted.

/// One parsed plaintext HTTP request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: String,
    /// Request-target exactly as sent (origin-form or absolute-form).
    pub target: String,
    /// Host header value, as sent (may carry a port).
    pub host: Option<String>,
}

impl HttpRequest {
    /// URL of this request: absolute-form targets pass through, otherwise
    /// scheme + Host + target. None without a Host.
    pub fn url(&self) -> Option<String> {
        if self.target.starts_with("http://") || self.target.starts_with("https://") {
            return Some(self.target.clone());
        }
        let host = self.host.as_deref()?;
        let sep = if self.target.starts_with('/') { "" } else { "/" };
        Some(format!("http://{}{}{}", host, sep, self.target))
    }

    /// Host with any port stripped, lowercased; None when the value is not a
    /// usable name (empty or garbled).
    pub fn host_name(&self) -> Option<String> {
        let raw = self.host.as_deref()?.trim();
        let name = if let Some(rest) = raw.strip_prefix('[') {
            // Bracketed IPv6 literal.
            rest.split(']').next().unwrap_or("")
        } else {
            raw.rsplit_once(':')
                .filter(|(_, p)| p.chars().all(|c| c.is_ascii_digit()) && !p.is_empty())
                .map(|(h, _)| h)
                .unwrap_or(raw)
        };
        if name.is_empty() {
            return None;
        }
        Some(name.trim_end_matches('.').to_lowercase())
    }
}

const METHODS: &[&str] = &[
    "GET", "POST", "PUT", "DELETE", "HEAD", "OPTIONS", "PATCH", "CONNECT", "TRACE",
];

/// Does this byte stream begin with an HTTP/1.x request line?
pub fn starts_with_request(payload: &[u8]) -> bool {
    parse_request_at(payload, 0).is_some()
}

/// Parse every request found in an upstream byte stream. Pipelined requests
/// after a body are found by scanning for the next method token at a line
/// start; requests with unread bodies may be missed, never misparsed.
pub fn parse_requests(stream: &[u8]) -> Vec<HttpRequest> {
    let mut out = Vec::new();
    let mut pos = 0usize;
    while pos < stream.len() {
        match parse_request_at(stream, pos) {
            Some((req, next)) => {
                out.push(req);
                pos = next;
            }
            None => match next_line(stream, pos) {
                Some(next) => pos = next,
                None => break,
            },
        }
    }
    out
}

fn next_line(stream: &[u8], pos: usize) -> Option<usize> {
    stream[pos..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|i| pos + i + 1)
}

/// Parse one request (request line + headers) starting exactly at `pos`.
/// Returns the request and the offset just past its header block.
fn parse_request_at(stream: &[u8], pos: usize) -> Option<(HttpRequest, usize)> {
    let line_end = stream[pos..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|i| pos + i)?;
    let line = std::str::from_utf8(&stream[pos..line_end]).ok()?;
    let line = line.trim_end_matches('\r');

    let mut parts = line.split(' ');
    let method = parts.next()?;
    let target = parts.next()?;
    let version = parts.next()?;
    if parts.next().is_some() || !METHODS.contains(&method) {
        return None;
    }
    if !version.starts_with("HTTP/1.") || target.is_empty() {
        return None;
    }

    let mut host = None;
    let mut cursor = line_end + 1;
    loop {
        let end = match stream[cursor..].iter().position(|&b| b == b'\n') {
            Some(i) => cursor + i,
            // Headers cut off by the capture snap length still count.
            None => stream.len(),
        };
        let raw = &stream[cursor..end];
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        if raw.is_empty() {
            cursor = end.saturating_add(1).min(stream.len());
            break;
        }
        if let Ok(text) = std::str::from_utf8(raw) {
            if let Some((name, value)) = text.split_once(':') {
                if name.eq_ignore_ascii_case("host") && host.is_none() {
                    host = Some(value.trim().to_string());
                }
            }
        }
        if end == stream.len() {
            cursor = end;
            break;
        }
        cursor = end + 1;
    }

    Some((
        HttpRequest {
            method: method.to_string(),
            target: target.to_string(),
            host,
        },
        cursor,
    ))
}

/// Does this byte stream begin with an HTTP/1.x status line?
pub fn starts_with_response(payload: &[u8]) -> bool {
    let Some(line_end) = payload.iter().position(|&b| b == b'\n' || b == b'\r') else {
        return false;
    };
    let Ok(line) = std::str::from_utf8(&payload[..line_end]) else {
        return false;
    };
    let mut parts = line.splitn(3, ' ');
    let version = parts.next().unwrap_or("");
    let status = parts.next().unwrap_or("");
    version.starts_with("HTTP/1.")
        && status.len() == 3
        && status.chars().all(|c| c.is_ascii_digit())
}
