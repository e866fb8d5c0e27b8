//! Risk surfacing for relayed flows.
//!
//! Three concerns live here: the abnormal-traffic rule engine that marks
//! relayed flows worth manual review, suffix-based classification of
//! sensitive destinations (government, military, education), and
//! threat-intelligence verdicts aggregated across pluggable providers with
//! an append-only on-disk cache.

mod intel;
#[cfg(feature = "online")]
pub mod online;
mod rules;
mod sensitive;

pub use intel::{
    interpret_urlhaus, interpret_virustotal, interpret_xforce, query_threat_providers,
    summarize_verdicts, write_threat_csv, AddressKind, CacheEntry, IntelConfig, IntelError,
    MockFailure, MockProvider, ProviderError, ProviderFinding, ProviderOutcome, ProviderSpec,
    QueryOptions,
    ThreatProvider, ThreatSummary, ThreatVerdict, VerdictCache, VerdictIndex, DEFAULT_TTL_SECS,
};
pub use rules::{
    evaluate_anomaly_rules, write_anomaly_jsonl, AnomalyReport, AnomalyRule, LocationIndex,
    RuleConfig, RuleHit,
};
pub use sensitive::{classify_sensitive, SensitiveCategory, SensitiveClass};
