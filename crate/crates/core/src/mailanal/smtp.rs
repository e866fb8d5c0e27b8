//! SMTP dialogue reconstruction. Walks a flow's payload in capture order,
//! replays the command/reply exchange, and reduces it to a delivery
//! outcome: how far the delivery got and, for failures, why the server
//! said no.
//!
//! Stage buckets follow the coarse progress ladder observable on the
//! wire: no accepted HELO, accepted HELO but no transmitted message,
//! message transmitted but refused, message accepted. Failures between an
//! accepted RCPT and the end of DATA land in the rejected-after-data
//! bucket only when the body actually went out.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::capture::{Direction, Flow};
use crate::mailanal::MailError;

/// How far the delivery progressed before the dialogue ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeliveryStage {
    RejectedBeforeHelo,
    ClosedBeforeRcpt,
    RejectedAfterData,
    Delivered,
}

impl DeliveryStage {
    pub const ALL: [DeliveryStage; 4] = [
        DeliveryStage::RejectedBeforeHelo,
        DeliveryStage::ClosedBeforeRcpt,
        DeliveryStage::RejectedAfterData,
        DeliveryStage::Delivered,
    ];

    pub fn index(&self) -> usize {
        match self {
            DeliveryStage::RejectedBeforeHelo => 0,
            DeliveryStage::ClosedBeforeRcpt => 1,
            DeliveryStage::RejectedAfterData => 2,
            DeliveryStage::Delivered => 3,
        }
    }
}

/// Why the server refused, keyed off its reply text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureCause {
    IpBlocklist,
    ContentFilter,
    AuthFailure,
    /// Delivered sessions, and failures whose reply text matched no rule.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryOutcome {
    pub stage: DeliveryStage,
    pub cause: FailureCause,
}

/// One reconstructed SMTP delivery attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmtpSession {
    /// EHLO/HELO argument.
    pub client_fqdn: Option<String>,
    /// MAIL FROM address.
    pub sender: Option<String>,
    /// RCPT TO addresses as commanded, in order.
    pub recipients: Vec<String>,
    /// Message body, present only when DATA was accepted with 354 and the
    /// terminating dot arrived.
    pub message: Option<Vec<u8>>,
    /// Server replies (code, text) in wire order.
    pub transcript: Vec<(u16, String)>,
    pub outcome: DeliveryOutcome,
    /// Dialogue ended mid-line or mid-body.
    pub truncated: bool,
    /// STARTTLS accepted; everything after the upgrade is opaque and only
    /// the plaintext prefix was analyzed.
    pub tls_upgraded: bool,
    /// Destination server IP, from the flow key.
    pub server: String,
}

/// One keyword rule: any phrase appearing in a failure reply assigns the
/// cause. Earlier rules win.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRule {
    pub cause: FailureCause,
    pub phrases: Vec<String>,
}

/// Editable cause taxonomy, seeded with phrases observed on real servers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRules {
    pub rules: Vec<FailureRule>,
}

const DEFAULT_FAILURE_RULES: &str = include_str!("default_failure_rules.toml");

impl FailureRules {
    pub fn bundled() -> Self {
        toml::from_str(DEFAULT_FAILURE_RULES).expect("bundled failure rules parse")
    }

    pub fn load(path: &Path) -> Result<Self, MailError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| MailError::Io { path: path.to_path_buf(), source })?;
        toml::from_str(&text).map_err(|err| MailError::Parse {
            path: path.to_path_buf(),
            detail: err.to_string(),
        })
    }

    /// First rule with a phrase contained in the (lowercased) reply text.
    pub fn classify(&self, reply_text: &str) -> FailureCause {
        let haystack = reply_text.to_lowercase();
        for rule in &self.rules {
            if rule.phrases.iter().any(|p| haystack.contains(p.to_lowercase().as_str())) {
                return rule.cause;
            }
        }
        FailureCause::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pending {
    Helo,
    Mail,
    Rcpt,
    Data,
    EndOfData,
    StartTls,
    Other,
}

/// Replay the dialogue and classify the outcome. The flow is expected to
/// carry plaintext SMTP; anything unparseable simply contributes nothing.
pub fn parse_smtp_session(flow: &Flow, rules: &FailureRules) -> SmtpSession {
    let mut up = LineBuffer::default();
    let mut down = LineBuffer::default();

    let mut client_fqdn = None;
    let mut sender = None;
    let mut recipients = Vec::new();
    let mut transcript: Vec<(u16, String)> = Vec::new();

    let mut pending: Option<Pending> = None;
    let mut helo_ok = false;
    let mut in_body = false;
    let mut body: Vec<u8> = Vec::new();
    let mut body_complete = false;
    let mut final_reply: Option<u16> = None;
    let mut tls_upgraded = false;

    'packets: for packet in &flow.packets {
        match packet.direction {
            Direction::Up => {
                for line in up.feed(&packet.payload) {
                    if in_body {
                        if line == b"." {
                            in_body = false;
                            body_complete = true;
                            pending = Some(Pending::EndOfData);
                        } else {
                            let content: &[u8] =
                                if line.starts_with(b"..") { &line[1..] } else { &line };
                            body.extend_from_slice(content);
                            body.extend_from_slice(b"\r\n");
                        }
                        continue;
                    }
                    let text = String::from_utf8_lossy(&line);
                    let mut words = text.split_whitespace();
                    let verb = words.next().unwrap_or("").to_ascii_uppercase();
                    pending = Some(match verb.as_str() {
                        "HELO" | "EHLO" => {
                            if let Some(arg) = words.next() {
                                client_fqdn = Some(arg.to_string());
                            }
                            Pending::Helo
                        }
                        "MAIL" => {
                            sender = extract_address(&text);
                            Pending::Mail
                        }
                        "RCPT" => {
                            if let Some(addr) = extract_address(&text) {
                                recipients.push(addr);
                            }
                            Pending::Rcpt
                        }
                        "DATA" => Pending::Data,
                        "STARTTLS" => Pending::StartTls,
                        _ => Pending::Other,
                    });
                }
            }
            Direction::Down => {
                for line in down.feed(&packet.payload) {
                    let text = String::from_utf8_lossy(&line);
                    let Some((code, multiline, reply)) = parse_reply(&text) else {
                        continue;
                    };
                    transcript.push((code, reply.to_string()));
                    if multiline {
                        continue;
                    }
                    match pending.take() {
                        Some(Pending::Helo) => helo_ok = code / 100 == 2,
                        Some(Pending::Data) => {
                            if code == 354 {
                                in_body = true;
                            }
                        }
                        Some(Pending::EndOfData) => {
                            if final_reply.is_none() {
                                final_reply = Some(code);
                            }
                        }
                        Some(Pending::StartTls) => {
                            if code / 100 == 2 {
                                tls_upgraded = true;
                                break 'packets;
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
    }

    let truncated = in_body || !up.rest.is_empty() || !down.rest.is_empty();

    let stage = if body_complete {
        match final_reply {
            Some(code) if code / 100 == 2 => DeliveryStage::Delivered,
            _ => DeliveryStage::RejectedAfterData,
        }
    } else if helo_ok {
        DeliveryStage::ClosedBeforeRcpt
    } else {
        DeliveryStage::RejectedBeforeHelo
    };

    let cause = if stage == DeliveryStage::Delivered {
        FailureCause::None
    } else {
        let failure_text: String = transcript
            .iter()
            .filter(|(code, _)| *code >= 400)
            .map(|(_, text)| text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        rules.classify(&failure_text)
    };

    SmtpSession {
        client_fqdn,
        sender,
        recipients,
        message: body_complete.then_some(body),
        transcript,
        outcome: DeliveryOutcome { stage, cause },
        truncated,
        tls_upgraded,
        server: flow.key.dst.ip.to_string(),
    }
}

/// Incremental CRLF line splitter keeping raw bytes.
#[derive(Default)]
struct LineBuffer {
    rest: Vec<u8>,
}

impl LineBuffer {
    fn feed(&mut self, bytes: &[u8]) -> Vec<Vec<u8>> {
        self.rest.extend_from_slice(bytes);
        let mut lines = Vec::new();
        while let Some(pos) = self.rest.iter().position(|&b| b == b'\n') {
            let mut line: Vec<u8> = self.rest.drain(..=pos).collect();
            line.pop();
            if line.last() == Some(&b'\r') {
                line.pop();
            }
            lines.push(line);
        }
        lines
    }
}

/// (code, is-continuation-line, text). Continuation lines use "250-".
fn parse_reply(line: &str) -> Option<(u16, bool, &str)> {
    let bytes = line.as_bytes();
    if bytes.len() < 3 || !bytes[..3].iter().all(u8::is_ascii_digit) {
        return None;
    }
    let code: u16 = line[..3].parse().ok()?;
    let multiline = bytes.get(3) == Some(&b'-');
    let text = line.get(4..).unwrap_or("").trim();
    Some((code, multiline, text))
}

/// Address inside angle brackets, or the token after the colon.
fn extract_address(command: &str) -> Option<String> {
    if let (Some(open), Some(close)) = (command.find('<'), command.find('>')) {
        if open < close {
            return Some(command[open + 1..close].to_string());
        }
    }
    let after = command.split_once(':')?.1.trim();
    let token = after.split_whitespace().next()?;
    (!token.is_empty()).then(|| token.to_string())
}
