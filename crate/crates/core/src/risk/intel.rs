//! Threat-intelligence plumbing: a pluggable provider interface, a local
//! append-only verdict cache, the query engine with rate limiting and
//! retry, and the aggregate summary table.
//!
//! Providers answer "is this address malicious" for IPs, domains, and URLs.
//! The bundled [`MockProvider`] keeps the test suite offline; HTTP adapters
//! live behind the `online` feature. A verdict is overall-malicious exactly
//! when at least one provider said malicious.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cached verdicts go stale after 30 days.
pub const DEFAULT_TTL_SECS: f64 = 30.0 * 86_400.0;

#[derive(Debug, Error)]
pub enum IntelError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },
}

/// Failure surface of one provider call.
#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    /// Credential rejections disable the provider for the rest of the run;
    /// retrying them cannot help.
    #[error("credential rejected: {0}")]
    Credential(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AddressKind {
    Ip,
    Fqdn,
    Url,
}

impl AddressKind {
    pub const ALL: [AddressKind; 3] = [AddressKind::Ip, AddressKind::Fqdn, AddressKind::Url];

    pub fn column_title(&self) -> &'static str {
        match self {
            AddressKind::Ip => "IPs",
            AddressKind::Fqdn => "Domains",
            AddressKind::Url => "URLs",
        }
    }

    fn index(&self) -> usize {
        match self {
            AddressKind::Ip => 0,
            AddressKind::Fqdn => 1,
            AddressKind::Url => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderOutcome {
    Malicious,
    Clean,
    /// No answer: provider error, disabled provider, or no record either
    /// way. Unknown outcomes are never cached.
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderFinding {
    pub provider: String,
    pub outcome: ProviderOutcome,
    pub categories: Vec<String>,
    pub queried_at: f64,
}

/// All providers' answers for one address.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreatVerdict {
    pub address: String,
    pub kind: AddressKind,
    pub findings: Vec<ProviderFinding>,
}

impl ThreatVerdict {
    /// At least one provider said malicious.
    pub fn malicious(&self) -> bool {
        self.findings.iter().any(|f| f.outcome == ProviderOutcome::Malicious)
    }

    /// Union of category tags across providers, sorted and deduplicated.
    pub fn categories(&self) -> Vec<String> {
        let set: BTreeSet<&String> =
            self.findings.iter().flat_map(|f| &f.categories).collect();
        set.into_iter().cloned().collect()
    }

    /// Most recent underlying answer.
    pub fn queried_at(&self) -> f64 {
        self.findings.iter().map(|f| f.queried_at).fold(0.0, f64::max)
    }
}

/// Address-keyed verdict lookup for the rule engine.
#[derive(Debug, Clone, Default)]
pub struct VerdictIndex {
    by_address: BTreeMap<String, ThreatVerdict>,
}

impl VerdictIndex {
    pub fn from_verdicts(verdicts: Vec<ThreatVerdict>) -> Self {
        let mut by_address = BTreeMap::new();
        for verdict in verdicts {
            by_address.insert(verdict.address.clone(), verdict);
        }
        VerdictIndex { by_address }
    }

    pub fn lookup(&self, address: &str) -> Option<&ThreatVerdict> {
        self.by_address.get(address)
    }

    pub fn malicious(&self, address: &str) -> bool {
        self.lookup(address).is_some_and(ThreatVerdict::malicious)
    }

    /// Names of providers that flagged the address, in finding order.
    pub fn alerting_providers(&self, address: &str) -> Vec<String> {
        self.lookup(address)
            .map(|verdict| {
                verdict
                    .findings
                    .iter()
                    .filter(|f| f.outcome == ProviderOutcome::Malicious)
                    .map(|f| f.provider.clone())
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// One reputation source. Implementations must be cheap to call from a
/// single thread; the engine paces calls to `rate_per_sec`.
pub trait ThreatProvider: Sync {
    fn name(&self) -> &str;
    fn supports(&self, kind: AddressKind) -> bool;
    /// Maximum query rate; infinite means unpaced.
    fn rate_per_sec(&self) -> f64 {
        f64::INFINITY
    }
    fn query(
        &self,
        address: &str,
        kind: AddressKind,
    ) -> Result<(ProviderOutcome, Vec<String>), ProviderError>;
}

/// Scripted failure for the mock provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockFailure {
    Transport,
    Credential,
}

/// In-memory provider: configured addresses are malicious, everything else
/// is clean. Counts its calls so tests can assert cache behavior.
pub struct MockProvider {
    name: String,
    kinds: Vec<AddressKind>,
    malicious: BTreeMap<String, Vec<String>>,
    fail: Option<MockFailure>,
    calls: AtomicU64,
}

impl MockProvider {
    pub fn new(name: &str, kinds: &[AddressKind]) -> Self {
        MockProvider {
            name: name.to_string(),
            kinds: kinds.to_vec(),
            malicious: BTreeMap::new(),
            fail: None,
            calls: AtomicU64::new(0),
        }
    }

    pub fn mark_malicious(&mut self, address: &str, categories: &[&str]) {
        self.malicious.insert(
            address.to_string(),
            categories.iter().map(|c| c.to_string()).collect(),
        );
    }

    pub fn failing(mut self, failure: MockFailure) -> Self {
        self.fail = Some(failure);
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl ThreatProvider for MockProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn supports(&self, kind: AddressKind) -> bool {
        self.kinds.contains(&kind)
    }

    fn query(
        &self,
        address: &str,
        _kind: AddressKind,
    ) -> Result<(ProviderOutcome, Vec<String>), ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        match self.fail {
            Some(MockFailure::Transport) => {
                return Err(ProviderError::Transport("scripted failure".to_string()))
            }
            Some(MockFailure::Credential) => {
                return Err(ProviderError::Credential("scripted rejection".to_string()))
            }
            None => {}
        }
        match self.malicious.get(address) {
            Some(categories) => Ok((ProviderOutcome::Malicious, categories.clone())),
            None => Ok((ProviderOutcome::Clean, Vec::new())),
        }
    }
}

/// One cached provider answer. Lines of the cache file are these, as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub provider: String,
    pub address: String,
    pub kind: AddressKind,
    pub outcome: ProviderOutcome,
    pub categories: Vec<String>,
    pub queried_at: f64,
}

/// Append-only JSONL verdict cache keyed by (provider, address). Rewrites
/// nothing: a newer line for the same key shadows older ones at load time.
/// Unparseable lines are skipped with a warning so a torn tail from a
/// crashed run cannot poison the store.
pub struct VerdictCache {
    path: PathBuf,
    ttl_secs: f64,
    entries: BTreeMap<(String, String), CacheEntry>,
    writer: Option<File>,
}

impl VerdictCache {
    pub fn open(path: &Path) -> Result<Self, IntelError> {
        Self::with_ttl(path, DEFAULT_TTL_SECS)
    }

    pub fn with_ttl(path: &Path, ttl_secs: f64) -> Result<Self, IntelError> {
        let mut entries = BTreeMap::new();
        match File::open(path) {
            Ok(file) => {
                for (number, line) in BufReader::new(file).lines().enumerate() {
                    let line = line.map_err(|source| IntelError::Io {
                        path: path.to_path_buf(),
                        source,
                    })?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    match serde_json::from_str::<CacheEntry>(&line) {
                        Ok(entry) => {
                            entries.insert(
                                (entry.provider.clone(), entry.address.clone()),
                                entry,
                            );
                        }
                        Err(err) => {
                            log::warn!(
                                "verdict cache {}: skipping line {}: {err}",
                                path.display(),
                                number + 1
                            );
                        }
                    }
                }
            }
            Err(err) if err.kind() == io::ErrorKind::NotFound => {}
            Err(source) => return Err(IntelError::Io { path: path.to_path_buf(), source }),
        }
        Ok(VerdictCache { path: path.to_path_buf(), ttl_secs, entries, writer: None })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry for (provider, address) if it is within TTL of `now`.
    pub fn fresh(&self, provider: &str, address: &str, now: f64) -> Option<&CacheEntry> {
        self.entries
            .get(&(provider.to_string(), address.to_string()))
            .filter(|entry| now - entry.queried_at <= self.ttl_secs)
    }

    fn record(&mut self, entry: CacheEntry) -> Result<(), IntelError> {
        if self.writer.is_none() {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|source| IntelError::Io { path: self.path.clone(), source })?;
            self.writer = Some(file);
        }
        let writer = self.writer.as_mut().expect("writer was just opened");
        let mut line = serde_json::to_vec(&entry).expect("cache entry serializes");
        line.push(b'\n');
        writer
            .write_all(&line)
            .map_err(|source| IntelError::Io { path: self.path.clone(), source })?;
        self.entries.insert((entry.provider.clone(), entry.address.clone()), entry);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QueryOptions {
    /// Reference time (unix seconds) for TTL checks and finding timestamps.
    pub now: f64,
    /// Extra attempts after a transport failure.
    pub retries: u32,
    /// First retry delay; doubles per attempt.
    pub backoff: Duration,
}

impl Default for QueryOptions {
    fn default() -> Self {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        QueryOptions { now, retries: 2, backoff: Duration::from_millis(500) }
    }
}

/// Resolve verdicts for every (address, kind), consulting the cache first.
/// Provider failures degrade to unknown findings; only a cache I/O failure
/// is fatal. Duplicate addresses collapse to their first occurrence.
pub fn query_threat_providers(
    addresses: &[(String, AddressKind)],
    providers: &[&dyn ThreatProvider],
    cache: &mut VerdictCache,
    opts: &QueryOptions,
) -> Result<Vec<ThreatVerdict>, IntelError> {
    let mut verdicts = Vec::new();
    let mut seen = BTreeSet::new();
    let mut disabled = vec![false; providers.len()];
    let mut last_call: Vec<Option<Instant>> = vec![None; providers.len()];

    for (address, kind) in addresses {
        if !seen.insert(address.clone()) {
            continue;
        }
        let mut findings = Vec::new();
        for (pi, provider) in providers.iter().enumerate() {
            if !provider.supports(*kind) {
                continue;
            }
            if let Some(entry) = cache.fresh(provider.name(), address, opts.now) {
                findings.push(ProviderFinding {
                    provider: entry.provider.clone(),
                    outcome: entry.outcome,
                    categories: entry.categories.clone(),
                    queried_at: entry.queried_at,
                });
                continue;
            }
            if disabled[pi] {
                findings.push(unknown_finding(provider.name(), opts.now));
                continue;
            }
            pace(&mut last_call[pi], provider.rate_per_sec());
            match query_with_retry(*provider, address, *kind, opts) {
                Ok((outcome, categories)) => {
                    if outcome != ProviderOutcome::Unknown {
                        cache.record(CacheEntry {
                            provider: provider.name().to_string(),
                            address: address.clone(),
                            kind: *kind,
                            outcome,
                            categories: categories.clone(),
                            queried_at: opts.now,
                        })?;
                    }
                    findings.push(ProviderFinding {
                        provider: provider.name().to_string(),
                        outcome,
                        categories,
                        queried_at: opts.now,
                    });
                }
                Err(ProviderError::Credential(detail)) => {
                    log::warn!("provider {} disabled: {detail}", provider.name());
                    disabled[pi] = true;
                    findings.push(unknown_finding(provider.name(), opts.now));
                }
                Err(err) => {
                    log::warn!("provider {} failed on {address}: {err}", provider.name());
                    findings.push(unknown_finding(provider.name(), opts.now));
                }
            }
        }
        verdicts.push(ThreatVerdict { address: address.clone(), kind: *kind, findings });
    }
    Ok(verdicts)
}

fn unknown_finding(provider: &str, now: f64) -> ProviderFinding {
    ProviderFinding {
        provider: provider.to_string(),
        outcome: ProviderOutcome::Unknown,
        categories: Vec::new(),
        queried_at: now,
    }
}

fn pace(last: &mut Option<Instant>, rate_per_sec: f64) {
    if rate_per_sec.is_finite() && rate_per_sec > 0.0 {
        let min_gap = Duration::from_secs_f64(1.0 / rate_per_sec);
        if let Some(previous) = *last {
            let elapsed = previous.elapsed();
            if elapsed < min_gap {
                thread::sleep(min_gap - elapsed);
            }
        }
    }
    *last = Some(Instant::now());
}

fn query_with_retry(
    provider: &dyn ThreatProvider,
    address: &str,
    kind: AddressKind,
    opts: &QueryOptions,
) -> Result<(ProviderOutcome, Vec<String>), ProviderError> {
    let mut attempt = 0;
    loop {
        match provider.query(address, kind) {
            Ok(answer) => return Ok(answer),
            Err(err @ ProviderError::Credential(_)) => return Err(err),
            Err(err) => {
                if attempt >= opts.retries {
                    return Err(err);
                }
                let wait = opts.backoff * 2u32.saturating_pow(attempt);
                if !wait.is_zero() {
                    thread::sleep(wait);
                }
                attempt += 1;
            }
        }
    }
}

/// Percent-malicious per provider and per address kind, plus the union row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThreatSummary {
    pub providers: Vec<String>,
    /// cells[provider][kind]: percent of that kind's addresses the provider
    /// flagged; None renders NA (no findings for the combination).
    pub cells: Vec<[Option<f64>; 3]>,
    /// Percent flagged by one or more providers, per kind.
    pub all: [Option<f64>; 3],
    /// Addresses queried per kind.
    pub totals: [u64; 3],
}

pub fn summarize_verdicts(verdicts: &[ThreatVerdict]) -> ThreatSummary {
    let mut providers: Vec<String> = Vec::new();
    for verdict in verdicts {
        for finding in &verdict.findings {
            if !providers.contains(&finding.provider) {
                providers.push(finding.provider.clone());
            }
        }
    }
    let mut totals = [0u64; 3];
    let mut union_hits = [0u64; 3];
    let mut provider_hits = vec![[0u64; 3]; providers.len()];
    let mut provider_seen = vec![[0u64; 3]; providers.len()];
    for verdict in verdicts {
        let kind = verdict.kind.index();
        totals[kind] += 1;
        if verdict.malicious() {
            union_hits[kind] += 1;
        }
        for finding in &verdict.findings {
            let pi = providers.iter().position(|p| *p == finding.provider).unwrap();
            provider_seen[pi][kind] += 1;
            if finding.outcome == ProviderOutcome::Malicious {
                provider_hits[pi][kind] += 1;
            }
        }
    }
    let percent = |hits: u64, total: u64| -> Option<f64> {
        (total > 0).then(|| 100.0 * hits as f64 / total as f64)
    };
    let cells = provider_hits
        .iter()
        .zip(&provider_seen)
        .map(|(hits, seen)| {
            [0, 1, 2].map(|k| percent(hits[k], seen[k]))
        })
        .collect();
    let all = [0, 1, 2].map(|k| percent(union_hits[k], totals[k]));
    ThreatSummary { providers, cells, all, totals }
}

/// "15.27%", "0.0034%", "0" for exact zero, "NA" for absent cells.
fn percent_cell(value: Option<f64>) -> String {
    match value {
        None => "NA".to_string(),
        Some(v) if v == 0.0 => "0".to_string(),
        Some(v) => {
            let text = format!("{v:.4}");
            let text = text.trim_end_matches('0').trim_end_matches('.');
            format!("{text}%")
        }
    }
}

/// CSV with one row per provider and a final union row:
/// `OTX Platform,IPs,Domains,URLs`.
pub fn write_threat_csv<W: io::Write>(out: &mut W, summary: &ThreatSummary) -> io::Result<()> {
    writeln!(out, "OTX Platform,IPs,Domains,URLs")?;
    for (provider, cells) in summary.providers.iter().zip(&summary.cells) {
        writeln!(
            out,
            "{provider},{},{},{}",
            percent_cell(cells[0]),
            percent_cell(cells[1]),
            percent_cell(cells[2])
        )?;
    }
    writeln!(
        out,
        "All,{},{},{}",
        percent_cell(summary.all[0]),
        percent_cell(summary.all[1]),
        percent_cell(summary.all[2])
    )
}

/// Declarative provider wiring, loadable from TOML. The credential variable
/// holds the environment variable's name, never the secret itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub name: String,
    pub endpoint: String,
    #[serde(default = "default_rate")]
    pub rate_per_sec: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
    pub kinds: Vec<AddressKind>,
}

fn default_rate() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntelConfig {
    pub providers: Vec<ProviderSpec>,
}

const DEFAULT_PROVIDERS: &str = include_str!("default_providers.toml");

impl IntelConfig {
    pub fn bundled() -> Self {
        toml::from_str(DEFAULT_PROVIDERS).expect("bundled provider config parses")
    }

    pub fn load(path: &Path) -> Result<Self, IntelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| IntelError::Io { path: path.to_path_buf(), source })?;
        toml::from_str(&text)
            .map_err(|err| IntelError::Parse { path: path.to_path_buf(), detail: err.to_string() })
    }
}

/// Map a VirusTotal object report to an outcome: malicious when any engine
/// in `last_analysis_stats` flagged it, clean when the report exists and
/// none did, unknown otherwise. Categories come from the per-engine
/// `categories` map.
pub fn interpret_virustotal(doc: &serde_json::Value) -> (ProviderOutcome, Vec<String>) {
    let stats = &doc["data"]["attributes"]["last_analysis_stats"];
    let Some(malicious) = stats["malicious"].as_u64() else {
        return (ProviderOutcome::Unknown, Vec::new());
    };
    let categories: BTreeSet<String> = doc["data"]["attributes"]["categories"]
        .as_object()
        .map(|map| {
            map.values()
                .filter_map(|v| v.as_str())
                .map(|s| s.to_string())
                .collect()
        })
        .unwrap_or_default();
    let outcome = if malicious > 0 { ProviderOutcome::Malicious } else { ProviderOutcome::Clean };
    (outcome, categories.into_iter().collect())
}

/// Map an X-Force report: risk score of 4 or more is malicious, below is
/// clean, missing is unknown. Categories are the `cats` keys.
pub fn interpret_xforce(doc: &serde_json::Value) -> (ProviderOutcome, Vec<String>) {
    let Some(score) = doc["score"].as_f64().or_else(|| doc["result"]["score"].as_f64()) else {
        return (ProviderOutcome::Unknown, Vec::new());
    };
    let cats = doc["cats"].as_object().or_else(|| doc["result"]["cats"].as_object());
    let categories: Vec<String> =
        cats.map(|map| map.keys().cloned().collect()).unwrap_or_default();
    let outcome = if score >= 4.0 { ProviderOutcome::Malicious } else { ProviderOutcome::Clean };
    (outcome, categories)
}

/// Map a URLhaus lookup: the feed only lists malicious entries, so a hit is
/// malicious (tagged), an explicit no_results is clean, anything else is
/// unknown.
pub fn interpret_urlhaus(doc: &serde_json::Value) -> (ProviderOutcome, Vec<String>) {
    match doc["query_status"].as_str() {
        Some("ok") => {
            let mut categories: Vec<String> = Vec::new();
            if let Some(threat) = doc["threat"].as_str() {
                categories.push(threat.to_string());
            }
            if let Some(tags) = doc["tags"].as_array() {
                categories.extend(tags.iter().filter_map(|t| t.as_str()).map(String::from));
            }
            categories.sort();
            categories.dedup();
            (ProviderOutcome::Malicious, categories)
        }
        Some("no_results") => (ProviderOutcome::Clean, Vec::new()),
        _ => (ProviderOutcome::Unknown, Vec::new()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn opts() -> QueryOptions {
        QueryOptions { now: 1_000_000.0, retries: 1, backoff: Duration::ZERO }
    }

    fn cache_in(dir: &tempfile::TempDir) -> VerdictCache {
        VerdictCache::open(&dir.path().join("verdicts.jsonl")).unwrap()
    }

    #[test]
    fn overall_malicious_needs_just_one_provider() {
        let finding = |provider: &str, outcome| ProviderFinding {
            provider: provider.to_string(),
            outcome,
            categories: Vec::new(),
            queried_at: 0.0,
        };
        let clean = ThreatVerdict {
            address: "a".to_string(),
            kind: AddressKind::Ip,
            findings: vec![
                finding("p1", ProviderOutcome::Clean),
                finding("p2", ProviderOutcome::Unknown),
            ],
        };
        assert!(!clean.malicious());
        let mixed = ThreatVerdict {
            findings: vec![
                finding("p1", ProviderOutcome::Clean),
                finding("p2", ProviderOutcome::Malicious),
                finding("p3", ProviderOutcome::Clean),
            ],
            ..clean.clone()
        };
        assert!(mixed.malicious());
    }

    #[test]
    fn engine_merges_providers_and_caches_answers() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = cache_in(&dir);
        let mut p1 = MockProvider::new("p1", &AddressKind::ALL);
        p1.mark_malicious("203.0.113.9", &["botnet c2"]);
        let p2 = MockProvider::new("p2", &AddressKind::ALL);
        let addresses = vec![
            ("203.0.113.9".to_string(), AddressKind::Ip),
            ("clean.example.com".to_string(), AddressKind::Fqdn),
            ("203.0.113.9".to_string(), AddressKind::Ip),
        ];
        let verdicts =
            query_threat_providers(&addresses, &[&p1, &p2], &mut cache, &opts()).unwrap();
        // The duplicate address collapsed.
        assert_eq!(verdicts.len(), 2);
        assert!(verdicts[0].malicious());
        assert_eq!(verdicts[0].categories(), vec!["botnet c2".to_string()]);
        assert!(!verdicts[1].malicious());
        assert_eq!(p1.calls(), 2);
        assert_eq!(cache.len(), 4);
    }

    #[test]
    fn warm_cache_run_issues_zero_queries_and_identical_verdicts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("verdicts.jsonl");
        let addresses = vec![
            ("198.51.100.1".to_string(), AddressKind::Ip),
            ("bad.example.net".to_string(), AddressKind::Fqdn),
        ];
        let build = || {
            let mut p = MockProvider::new("p1", &AddressKind::ALL);
            p.mark_malicious("bad.example.net", &["phishing"]);
            p
        };

        let p = build();
        let mut cache = VerdictCache::open(&path).unwrap();
        let first =
            query_threat_providers(&addresses, &[&p], &mut cache, &opts()).unwrap();
        assert_eq!(p.calls(), 2);
        drop(cache);

        let p = build();
        let mut cache = VerdictCache::open(&path).unwrap();
        let later = QueryOptions { now: opts().now + 86_400.0, ..opts() };
        let second = query_threat_providers(&addresses, &[&p], &mut cache, &later).unwrap();
        assert_eq!(p.calls(), 0);
        assert_eq!(first, second);
    }

    #[test]
    fn expired_entries_requery() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("verdicts.jsonl");
        let addresses = vec![("198.51.100.2".to_string(), AddressKind::Ip)];
        let p = MockProvider::new("p1", &AddressKind::ALL);
        let mut cache = VerdictCache::open(&path).unwrap();
        query_threat_providers(&addresses, &[&p], &mut cache, &opts()).unwrap();
        assert_eq!(p.calls(), 1);
        drop(cache);

        let mut cache = VerdictCache::open(&path).unwrap();
        let stale = QueryOptions { now: opts().now + DEFAULT_TTL_SECS + 1.0, ..opts() };
        query_threat_providers(&addresses, &[&p], &mut cache, &stale).unwrap();
        assert_eq!(p.calls(), 2);
    }

    #[test]
    fn transport_failures_degrade_to_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = cache_in(&dir);
        let broken =
            MockProvider::new("flaky", &AddressKind::ALL).failing(MockFailure::Transport);
        let healthy = MockProvider::new("ok", &AddressKind::ALL);
        let addresses = vec![("198.51.100.3".to_string(), AddressKind::Ip)];
        let verdicts =
            query_threat_providers(&addresses, &[&broken, &healthy], &mut cache, &opts())
                .unwrap();
        let outcomes: Vec<ProviderOutcome> =
            verdicts[0].findings.iter().map(|f| f.outcome).collect();
        assert_eq!(outcomes, vec![ProviderOutcome::Unknown, ProviderOutcome::Clean]);
        // retries=1 means two attempts; unknowns are never cached.
        assert_eq!(broken.calls(), 2);
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn credential_rejection_disables_the_provider() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = cache_in(&dir);
        let locked =
            MockProvider::new("locked", &AddressKind::ALL).failing(MockFailure::Credential);
        let addresses = vec![
            ("198.51.100.4".to_string(), AddressKind::Ip),
            ("198.51.100.5".to_string(), AddressKind::Ip),
            ("198.51.100.6".to_string(), AddressKind::Ip),
        ];
        let verdicts =
            query_threat_providers(&addresses, &[&locked], &mut cache, &opts()).unwrap();
        assert_eq!(locked.calls(), 1);
        assert!(verdicts
            .iter()
            .all(|v| v.findings[0].outcome == ProviderOutcome::Unknown));
    }

    #[test]
    fn unsupported_kinds_are_skipped_entirely() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = cache_in(&dir);
        let urls_only = MockProvider::new("urls-only", &[AddressKind::Url]);
        let addresses = vec![("198.51.100.7".to_string(), AddressKind::Ip)];
        let verdicts =
            query_threat_providers(&addresses, &[&urls_only], &mut cache, &opts()).unwrap();
        assert_eq!(urls_only.calls(), 0);
        assert!(verdicts[0].findings.is_empty());
    }

    #[test]
    fn summary_reproduces_an_engineered_all_row() {
        // 10000 IPs; provider A flags 0..1000, provider B flags 927..1527.
        // The union is 1527 of 10000: the All cell must read 15.27%.
        let dir = tempfile::tempdir().unwrap();
        let mut cache = cache_in(&dir);
        let mut a = MockProvider::new("A", &[AddressKind::Ip, AddressKind::Fqdn]);
        let mut b = MockProvider::new("B", &[AddressKind::Ip, AddressKind::Fqdn]);
        let c = MockProvider::new("C", &[AddressKind::Fqdn, AddressKind::Url]);
        let mut addresses = Vec::new();
        for i in 0..10_000u32 {
            let ip = format!("10.{}.{}.{}", i >> 16, (i >> 8) & 0xff, i & 0xff);
            if i < 1000 {
                a.mark_malicious(&ip, &["spam"]);
            }
            if (927..1527).contains(&i) {
                b.mark_malicious(&ip, &["c2"]);
            }
            addresses.push((ip, AddressKind::Ip));
        }
        addresses.push(("clean.example.org".to_string(), AddressKind::Fqdn));
        addresses.push(("http://clean.example.org/x".to_string(), AddressKind::Url));
        let verdicts =
            query_threat_providers(&addresses, &[&a, &b, &c], &mut cache, &opts()).unwrap();
        let summary = summarize_verdicts(&verdicts);
        assert_eq!(summary.providers, vec!["A", "B", "C"]);
        assert_eq!(summary.totals, [10_000, 1, 1]);

        let mut csv = Vec::new();
        write_threat_csv(&mut csv, &summary).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "OTX Platform,IPs,Domains,URLs");
        assert_eq!(lines[1], "A,10%,0,NA");
        assert_eq!(lines[2], "B,6%,0,NA");
        assert_eq!(lines[3], "C,NA,0,0");
        assert_eq!(lines[4], "All,15.27%,0,0");
    }

    #[test]
    fn percent_cells_trim_like_the_published_table() {
        assert_eq!(percent_cell(None), "NA");
        assert_eq!(percent_cell(Some(0.0)), "0");
        assert_eq!(percent_cell(Some(15.27)), "15.27%");
        assert_eq!(percent_cell(Some(0.0034)), "0.0034%");
        assert_eq!(percent_cell(Some(4.5)), "4.5%");
        assert_eq!(percent_cell(Some(100.0)), "100%");
    }

    #[test]
    fn cache_survives_torn_tail_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("verdicts.jsonl");
        let mut cache = VerdictCache::open(&path).unwrap();
        cache
            .record(CacheEntry {
                provider: "p".to_string(),
                address: "1.2.3.4".to_string(),
                kind: AddressKind::Ip,
                outcome: ProviderOutcome::Clean,
                categories: Vec::new(),
                queried_at: 5.0,
            })
            .unwrap();
        drop(cache);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(b"{\"provider\":\"p\",\"addr");
        std::fs::write(&path, bytes).unwrap();
        let cache = VerdictCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        assert!(cache.fresh("p", "1.2.3.4", 6.0).is_some());
    }

    #[test]
    fn bundled_provider_config_parses_and_names_env_vars() {
        let config = IntelConfig::bundled();
        let names: Vec<&str> = config.providers.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, vec!["VirusTotal", "IBM X-Force", "URLhaus"]);
        assert!(config.providers[0].credential_env.as_deref() == Some("VT_API_KEY"));
        assert!(config.providers[2].credential_env.is_none());
        assert!(!config.providers[2].kinds.contains(&AddressKind::Ip));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("providers.toml");
        std::fs::write(&path, toml::to_string(&config).unwrap()).unwrap();
        assert_eq!(IntelConfig::load(&path).unwrap(), config);
    }

    #[test]
    fn provider_report_interpreters_map_canned_payloads() {
        let vt_bad = json!({"data": {"attributes": {
            "last_analysis_stats": {"malicious": 3, "harmless": 60},
            "categories": {"engine a": "phishing", "engine b": "malware"}
        }}});
        assert_eq!(
            interpret_virustotal(&vt_bad),
            (ProviderOutcome::Malicious, vec!["malware".to_string(), "phishing".to_string()])
        );
        let vt_clean = json!({"data": {"attributes": {
            "last_analysis_stats": {"malicious": 0, "harmless": 70}
        }}});
        assert_eq!(interpret_virustotal(&vt_clean).0, ProviderOutcome::Clean);
        assert_eq!(interpret_virustotal(&json!({})).0, ProviderOutcome::Unknown);

        let xf_bad = json!({"score": 7.1, "cats": {"Botnet Command and Control Server": 43}});
        let (outcome, cats) = interpret_xforce(&xf_bad);
        assert_eq!(outcome, ProviderOutcome::Malicious);
        assert_eq!(cats, vec!["Botnet Command and Control Server".to_string()]);
        assert_eq!(interpret_xforce(&json!({"score": 1})).0, ProviderOutcome::Clean);
        assert_eq!(interpret_xforce(&json!({})).0, ProviderOutcome::Unknown);

        let uh_bad = json!({"query_status": "ok", "threat": "malware_download",
                            "tags": ["elf", "mirai"]});
        let (outcome, cats) = interpret_urlhaus(&uh_bad);
        assert_eq!(outcome, ProviderOutcome::Malicious);
        assert_eq!(cats, vec!["elf", "malware_download", "mirai"]);
        assert_eq!(
            interpret_urlhaus(&json!({"query_status": "no_results"})).0,
            ProviderOutcome::Clean
        );
        assert_eq!(interpret_urlhaus(&json!({})).0, ProviderOutcome::Unknown);
    }
}
