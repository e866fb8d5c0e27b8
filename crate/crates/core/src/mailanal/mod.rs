//! Mail-abuse analysis for relayed flows: SMTP delivery reconstruction
//! with outcome and failure-cause classification, spam template matching
//! over evasion-decoded text, and privacy-preserving IMAP/POP3 retrieval
//! statistics.
//!
//! The module's outputs are aggregates by design. Message bodies reduce to
//! digests, account names to digest prefixes, and passwords are never
//! stored at all.

mod decode;
mod report;
mod retrieve;
mod smtp;
mod template;

pub use decode::{decode_evasions, Decoded};
pub use report::{
    retrieval_report, spam_report, write_retrieval_jsonl, write_smtp_jsonl,
    write_spam_category_csv, CategoryRow, RetrievalReport, SpamReport, CAUSE_BUCKETS,
};
pub use retrieve::{parse_mail_retrieval, MailProtocol, MailRetrievalSession};
pub use smtp::{
    parse_smtp_session, DeliveryOutcome, DeliveryStage, FailureCause, FailureRule, FailureRules,
    SmtpSession,
};
pub use template::{
    bundled_templates, match_templates, parse_templates, Slot, SpamTemplate, TemplateCategory,
};

use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MailError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("template {id}: {detail}")]
    Template { id: String, detail: String },
    /// Dialogue did not resolve far enough to classify.
    #[error("ambiguous dialogue")]
    Ambiguous,
}
