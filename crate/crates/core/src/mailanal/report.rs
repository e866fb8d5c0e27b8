//! Aggregate spam and retrieval statistics. Everything here is a serial
//! reduction over already-parsed sessions; percentages are computed from
//! exact integer counts so an engineered fixture reproduces its designed
//! distribution digit for digit.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::mailanal::decode::decode_evasions;
use crate::mailanal::retrieve::MailRetrievalSession;
use crate::mailanal::smtp::{DeliveryStage, FailureCause, SmtpSession};
use crate::mailanal::template::{SpamTemplate, TemplateCategory};

/// Failure causes in report order. The last bucket collects failures whose
/// reply text matched no rule.
pub const CAUSE_BUCKETS: [&str; 4] =
    ["ip-blocklist", "content-filter", "auth-failure", "unclassified"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryRow {
    pub category: TemplateCategory,
    /// Catalog size for the category, not just templates that matched.
    pub templates: u64,
    pub emails: u64,
    pub recipients: u64,
    pub email_percent: f64,
    pub recipient_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpamReport {
    /// Plaintext sessions aggregated below.
    pub sessions: u64,
    /// STARTTLS-upgraded sessions, counted here and excluded elsewhere.
    pub opaque_sessions: u64,
    pub unique_clients: u64,
    pub unique_senders: u64,
    pub unique_recipients: u64,
    pub unique_servers: u64,
    pub unique_messages: u64,
    /// Recipients on delivered sessions.
    pub delivered_recipients: u64,
    /// Counts by [`DeliveryStage`] index.
    pub stage_counts: [u64; 4],
    /// Sessions that did not reach the delivered stage.
    pub failures: u64,
    /// Counts by [`CAUSE_BUCKETS`] index.
    pub cause_counts: [u64; 4],
    /// Emails matched per template id, catalog order.
    pub template_emails: Vec<(String, u64)>,
    pub category_rows: Vec<CategoryRow>,
}

impl SpamReport {
    pub fn stage_percent(&self, stage: DeliveryStage) -> f64 {
        percent(self.stage_counts[stage.index()], self.sessions)
    }

    /// Share of all failures attributed to the cause bucket.
    pub fn cause_percent(&self, bucket: usize) -> f64 {
        percent(self.cause_counts[bucket], self.failures)
    }
}

fn percent(count: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(digest.len() * 2);
    for byte in digest.iter() {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

fn cause_bucket(cause: FailureCause) -> usize {
    match cause {
        FailureCause::IpBlocklist => 0,
        FailureCause::ContentFilter => 1,
        FailureCause::AuthFailure => 2,
        FailureCause::None => 3,
    }
}

/// Reduce parsed sessions to the summary table. Messages are decoded with
/// the evasion decoder before template matching; a message matching
/// several templates counts once per template, and category totals count
/// each message once per category.
pub fn spam_report(sessions: &[SmtpSession], templates: &[SpamTemplate]) -> SpamReport {
    let mut clients = BTreeSet::new();
    let mut senders = BTreeSet::new();
    let mut recipients = BTreeSet::new();
    let mut servers = BTreeSet::new();
    let mut messages = BTreeSet::new();
    let mut delivered_recipients = 0u64;
    let mut stage_counts = [0u64; 4];
    let mut cause_counts = [0u64; 4];
    let mut failures = 0u64;
    let mut opaque_sessions = 0u64;
    let mut plain_sessions = 0u64;
    let mut template_emails: BTreeMap<&str, u64> = BTreeMap::new();
    let mut category_emails: BTreeMap<TemplateCategory, u64> = BTreeMap::new();
    let mut category_recipients: BTreeMap<TemplateCategory, u64> = BTreeMap::new();

    for session in sessions {
        if session.tls_upgraded {
            opaque_sessions += 1;
            continue;
        }
        plain_sessions += 1;
        if let Some(fqdn) = &session.client_fqdn {
            clients.insert(fqdn.clone());
        }
        if let Some(sender) = &session.sender {
            senders.insert(sender.clone());
        }
        for recipient in &session.recipients {
            recipients.insert(recipient.clone());
        }
        servers.insert(session.server.clone());

        let stage = session.outcome.stage;
        stage_counts[stage.index()] += 1;
        if stage == DeliveryStage::Delivered {
            delivered_recipients += session.recipients.len() as u64;
        } else {
            failures += 1;
            cause_counts[cause_bucket(session.outcome.cause)] += 1;
        }

        if let Some(message) = &session.message {
            messages.insert(Sha256::digest(message).to_vec());
            let decoded = decode_evasions(message);
            let mut matched_categories = BTreeSet::new();
            for template in templates {
                if template.matches(&decoded.text) {
                    *template_emails.entry(template.id.as_str()).or_insert(0) += 1;
                    matched_categories.insert(template.category);
                }
            }
            for category in matched_categories {
                *category_emails.entry(category).or_insert(0) += 1;
                *category_recipients.entry(category).or_insert(0) +=
                    session.recipients.len() as u64;
            }
        }
    }

    let matched_email_total: u64 = category_emails.values().sum();
    let matched_recipient_total: u64 = category_recipients.values().sum();
    let category_rows = TemplateCategory::ALL
        .iter()
        .map(|&category| {
            let emails = category_emails.get(&category).copied().unwrap_or(0);
            let recips = category_recipients.get(&category).copied().unwrap_or(0);
            CategoryRow {
                category,
                templates: templates.iter().filter(|t| t.category == category).count() as u64,
                emails,
                recipients: recips,
                email_percent: percent(emails, matched_email_total),
                recipient_percent: percent(recips, matched_recipient_total),
            }
        })
        .collect();

    SpamReport {
        sessions: plain_sessions,
        opaque_sessions,
        unique_clients: clients.len() as u64,
        unique_senders: senders.len() as u64,
        unique_recipients: recipients.len() as u64,
        unique_servers: servers.len() as u64,
        unique_messages: messages.len() as u64,
        delivered_recipients,
        stage_counts,
        failures,
        cause_counts,
        template_emails: templates
            .iter()
            .map(|t| {
                (t.id.clone(), template_emails.get(t.id.as_str()).copied().unwrap_or(0))
            })
            .collect(),
        category_rows,
    }
}

/// Category table: `Spam Category,Templates,% Emails,% Recipients`.
pub fn write_spam_category_csv<W: io::Write>(out: &mut W, report: &SpamReport) -> io::Result<()> {
    writeln!(out, "Spam Category,Templates,% Emails,% Recipients")?;
    for row in &report.category_rows {
        writeln!(
            out,
            "{},{},{:.2}%,{:.2}%",
            row.category.display_name(),
            row.templates,
            row.email_percent,
            row.recipient_percent
        )?;
    }
    Ok(())
}

/// Privacy-safe per-session line. The message body never appears; it is
/// reduced to a digest and a length.
#[derive(Debug, Serialize)]
struct SessionLine<'a> {
    server: &'a str,
    client_fqdn: Option<&'a str>,
    sender: Option<&'a str>,
    recipient_count: usize,
    stage: DeliveryStage,
    cause: FailureCause,
    truncated: bool,
    tls_upgraded: bool,
    message_sha256: Option<String>,
    message_bytes: Option<usize>,
}

pub fn write_smtp_jsonl<W: io::Write>(out: &mut W, sessions: &[SmtpSession]) -> io::Result<()> {
    for session in sessions {
        let line = SessionLine {
            server: &session.server,
            client_fqdn: session.client_fqdn.as_deref(),
            sender: session.sender.as_deref(),
            recipient_count: session.recipients.len(),
            stage: session.outcome.stage,
            cause: session.outcome.cause,
            truncated: session.truncated,
            tls_upgraded: session.tls_upgraded,
            message_sha256: session.message.as_deref().map(hex_digest),
            message_bytes: session.message.as_ref().map(Vec::len),
        };
        serde_json::to_writer(&mut *out, &line)?;
        writeln!(out)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub sessions: u64,
    /// Ambiguous dialogues dropped before aggregation.
    pub dropped: u64,
    pub accounts: u64,
    /// Accounts with at least one successful login.
    pub successful_accounts: u64,
    pub retrieved_messages: u64,
}

impl RetrievalReport {
    pub fn success_percent(&self) -> f64 {
        percent(self.successful_accounts, self.accounts)
    }
}

pub fn retrieval_report(sessions: &[MailRetrievalSession], dropped: u64) -> RetrievalReport {
    let mut accounts: BTreeMap<&str, bool> = BTreeMap::new();
    let mut retrieved = 0u64;
    for session in sessions {
        let ok = accounts.entry(session.account_digest.as_str()).or_insert(false);
        *ok |= session.login_ok;
        retrieved += u64::from(session.retrieved);
    }
    RetrievalReport {
        sessions: sessions.len() as u64,
        dropped,
        accounts: accounts.len() as u64,
        successful_accounts: accounts.values().filter(|ok| **ok).count() as u64,
        retrieved_messages: retrieved,
    }
}

pub fn write_retrieval_jsonl<W: io::Write>(
    out: &mut W,
    sessions: &[MailRetrievalSession],
) -> io::Result<()> {
    for session in sessions {
        serde_json::to_writer(&mut *out, session)?;
        writeln!(out)?;
    }
    Ok(())
}
