//! Plaintext IMAP/POP3 retrieval-session analysis. Only aggregate facts
//! leave this module: the account identifier is a digest prefix, login
//! outcome is a flag, and retrieved mail is a count. Passwords and
//! message bodies are parsed past, never stored.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::capture::{Direction, Flow};
use crate::mailanal::MailError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MailProtocol {
    Imap,
    Pop3,
}

/// One retrieval session reduced to privacy-safe aggregates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MailRetrievalSession {
    pub protocol: MailProtocol,
    /// Hex SHA-256 prefix of the login name; the name itself is dropped.
    pub account_digest: String,
    pub login_ok: bool,
    /// Completed RETR (POP3) or FETCH (IMAP) commands after a successful
    /// login.
    pub retrieved: u32,
}

/// 12 hex characters are plenty to tell fixture accounts apart while
/// making the original name unrecoverable in output.
fn digest_account(name: &str) -> String {
    let digest = Sha256::digest(name.as_bytes());
    let mut hex = String::with_capacity(12);
    for byte in &digest[..6] {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// Parse one plaintext retrieval flow. The protocol is taken from the
/// destination port (110/995 POP3, 143/993 IMAP) with the server banner
/// as fallback; a dialogue that never resolves a login attempt is
/// ambiguous and dropped.
pub fn parse_mail_retrieval(flow: &Flow) -> Result<MailRetrievalSession, MailError> {
    let protocol = match flow.key.dst.port {
        110 | 995 => MailProtocol::Pop3,
        143 | 993 => MailProtocol::Imap,
        _ => {
            let banner = flow
                .packets
                .iter()
                .find(|p| p.direction == Direction::Down)
                .map(|p| String::from_utf8_lossy(&p.payload).into_owned())
                .unwrap_or_default();
            if banner.starts_with("+OK") {
                MailProtocol::Pop3
            } else if banner.starts_with("* OK") {
                MailProtocol::Imap
            } else {
                return Err(MailError::Ambiguous);
            }
        }
    };
    match protocol {
        MailProtocol::Pop3 => parse_pop3(flow),
        MailProtocol::Imap => parse_imap(flow),
    }
}

fn dialogue_lines(flow: &Flow) -> Vec<(Direction, String)> {
    let mut up = Vec::new();
    let mut down = Vec::new();
    let mut lines = Vec::new();
    for packet in &flow.packets {
        let buffer = match packet.direction {
            Direction::Up => &mut up,
            Direction::Down => &mut down,
        };
        buffer.extend_from_slice(&packet.payload);
        while let Some(pos) = buffer.iter().position(|&b| b == b'\n') {
            let mut line: Vec<u8> = buffer.drain(..=pos).collect();
            line.pop();
            if line.last() == Some(&b'\r') {
                line.pop();
            }
            lines.push((packet.direction, String::from_utf8_lossy(&line).into_owned()));
        }
    }
    lines
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pop3Pending {
    Pass,
    Retr,
    Other,
}

fn parse_pop3(flow: &Flow) -> Result<MailRetrievalSession, MailError> {
    let mut username: Option<String> = None;
    let mut login: Option<bool> = None;
    let mut retrieved = 0u32;
    let mut pending: Option<Pop3Pending> = None;
    let mut in_body = false;

    for (direction, line) in dialogue_lines(flow) {
        match direction {
            Direction::Up => {
                let mut words = line.split_whitespace();
                let verb = words.next().unwrap_or("").to_ascii_uppercase();
                pending = Some(match verb.as_str() {
                    "USER" => {
                        username = words.next().map(str::to_string);
                        Pop3Pending::Other
                    }
                    "PASS" => Pop3Pending::Pass,
                    "RETR" => Pop3Pending::Retr,
                    _ => Pop3Pending::Other,
                });
            }
            Direction::Down => {
                if in_body {
                    if line == "." {
                        in_body = false;
                    }
                    continue;
                }
                let ok = line.starts_with("+OK");
                if !ok && !line.starts_with("-ERR") {
                    continue;
                }
                match pending.take() {
                    Some(Pop3Pending::Pass) => {
                        if login.is_none() {
                            login = Some(ok);
                        }
                    }
                    Some(Pop3Pending::Retr) => {
                        if ok {
                            if login == Some(true) {
                                retrieved += 1;
                            }
                            in_body = true;
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    let (Some(name), Some(login_ok)) = (username, login) else {
        return Err(MailError::Ambiguous);
    };
    Ok(MailRetrievalSession {
        protocol: MailProtocol::Pop3,
        account_digest: digest_account(&name),
        login_ok,
        retrieved,
    })
}

fn parse_imap(flow: &Flow) -> Result<MailRetrievalSession, MailError> {
    let mut username: Option<String> = None;
    let mut login: Option<bool> = None;
    let mut retrieved = 0u32;
    let mut login_tag: Option<String> = None;
    let mut fetch_tags: Vec<String> = Vec::new();

    for (direction, line) in dialogue_lines(flow) {
        match direction {
            Direction::Up => {
                let mut words = line.split_whitespace();
                let Some(tag) = words.next() else { continue };
                let verb = words.next().unwrap_or("").to_ascii_uppercase();
                match verb.as_str() {
                    "LOGIN" => {
                        username = words.next().map(|w| w.trim_matches('"').to_string());
                        login_tag = Some(tag.to_string());
                    }
                    "FETCH" => fetch_tags.push(tag.to_string()),
                    _ => {}
                }
            }
            Direction::Down => {
                // Untagged responses ("* 1 FETCH ...") carry data, not
                // command completion.
                if line.starts_with('*') {
                    continue;
                }
                let mut words = line.split_whitespace();
                let (Some(tag), Some(status)) = (words.next(), words.next()) else {
                    continue;
                };
                let ok = status.eq_ignore_ascii_case("OK");
                if Some(tag) == login_tag.as_deref() {
                    if login.is_none() {
                        login = Some(ok);
                    }
                } else if let Some(at) = fetch_tags.iter().position(|t| t == tag) {
                    fetch_tags.remove(at);
                    if ok && login == Some(true) {
                        retrieved += 1;
                    }
                }
            }
        }
    }

    let (Some(name), Some(login_ok)) = (username, login) else {
        return Err(MailError::Ambiguous);
    };
    Ok(MailRetrievalSession {
        protocol: MailProtocol::Imap,
        account_digest: digest_account(&name),
        login_ok,
        retrieved,
    })
}
