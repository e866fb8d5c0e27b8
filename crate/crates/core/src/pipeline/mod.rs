//! End-to-end orchestration: ingest captures, identify protocols and
//! destinations, triage flows, run the relayed-traffic analyses, and write
//! every artifact into one run directory with a content-hashed manifest.
//!
//! The pipeline is deterministic: the same input files and seed produce
//! byte-identical artifacts and therefore an identical manifest. Soft
//! errors (unparseable frames, ambiguous mail dialogues, flows too empty
//! to featurize) accumulate in counters and never abort a run.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::appid::{
    extract_destination, identify_protocol, protocol_mix_report, write_mix_csv, AppidConfig,
    DestinationRecord, Protocol, ProtocolTag, SuffixList,
};
use crate::capture::{ingest_capture, AssemblyConfig, CaptureError, Flow, FlowSummary};
use crate::features::{extract_features, write_matrix_csv, FeatureConfig, FeatureError};
use crate::mailanal::{
    parse_mail_retrieval, parse_smtp_session, retrieval_report, spam_report, write_retrieval_jsonl,
    write_smtp_jsonl, write_spam_category_csv, FailureRules, MailError, RetrievalReport,
    SpamReport,
};
use crate::risk::{
    classify_sensitive, evaluate_anomaly_rules, write_anomaly_jsonl, RuleConfig, SensitiveCategory,
    VerdictIndex,
};
use crate::triage::{classify_flow, FlowClass, SignatureConfig, TriageClass, TriageError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: input capture {0} does not exist")]
    MissingInput(PathBuf),
    #[error("config: {0}")]
    Config(String),
    #[error("ingest: {0}")]
    Ingest(#[from] CaptureError),
    #[error("triage: {0}")]
    Triage(#[from] TriageError),
    #[error("features: {0}")]
    Feature(#[from] FeatureError),
    #[error("mail: {0}")]
    Mail(#[from] MailError),
    #[error("report: cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
}

impl PipelineError {
    /// Exit status the process should carry: 2 for configuration problems,
    /// 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::MissingInput(_) | PipelineError::Config(_) => 2,
            _ => 1,
        }
    }
}

/// Everything a run needs. Optional files fall back to the bundled
/// defaults.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub assembly: AssemblyConfig,
    pub signatures: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub failure_rules: Option<PathBuf>,
    pub features: FeatureConfig,
    pub rules: RuleConfig,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn new(inputs: Vec<PathBuf>, out_dir: PathBuf) -> Self {
        PipelineConfig {
            inputs,
            out_dir,
            assembly: AssemblyConfig::default(),
            signatures: None,
            templates: None,
            failure_rules: None,
            features: FeatureConfig::default(),
            rules: RuleConfig::default(),
            seed: 0,
        }
    }
}

/// Soft-error and volume counters for the whole run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineCounters {
    pub frames: u64,
    pub truncated_frames: u64,
    pub non_ip_frames: u64,
    pub non_transport_frames: u64,
    pub dns_responses: u64,
    pub clock_skew: u64,
    pub flows: u64,
    pub control_flows: u64,
    pub tunnel_flows: u64,
    pub relayed_flows: u64,
    pub flagged_flows: u64,
    pub sensitive_destinations: u64,
    pub smtp_sessions: u64,
    pub retrieval_sessions: u64,
    pub ambiguous_retrieval: u64,
    pub unfeaturized_flows: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// One written artifact: its content hash and the declared inputs of the
/// stage that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    pub bytes: u64,
    pub stage: String,
    pub inputs: Vec<String>,
}

/// The run manifest, written as `manifest.json`. Identical inputs and seed
/// reproduce this file byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    pub counters: PipelineCounters,
}

/// What the caller gets back alongside the files on disk.
#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub spam: SpamReport,
    pub retrieval: RetrievalReport,
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn sha256_hex(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

struct ArtifactStore {
    dir: PathBuf,
    entries: BTreeMap<String, ArtifactEntry>,
}

impl ArtifactStore {
    fn put(
        &mut self,
        name: &str,
        stage: &str,
        inputs: &[&str],
        content: Vec<u8>,
    ) -> Result<(), PipelineError> {
        let path = self.dir.join(name);
        std::fs::write(&path, &content)
            .map_err(|source| PipelineError::Write { path: path.clone(), source })?;
        self.entries.insert(
            name.to_string(),
            ArtifactEntry {
                sha256: sha256_hex(&content),
                bytes: content.len() as u64,
                stage: stage.to_string(),
                inputs: inputs.iter().map(|s| s.to_string()).collect(),
            },
        );
        Ok(())
    }
}

#[derive(Serialize)]
struct DestinationLine<'a> {
    flow_id: u64,
    protocol: Protocol,
    #[serde(flatten)]
    dest: &'a DestinationRecord,
}

#[derive(Serialize)]
struct TriageLine<'a> {
    flow_id: u64,
    #[serde(flatten)]
    class: &'a FlowClass,
}

#[derive(Serialize)]
struct SensitiveLine<'a> {
    flow_id: u64,
    fqdn: &'a str,
    class: SensitiveCategory,
}

/// Run every stage over the configured captures. See the module docs for
/// the artifact list; the manifest names each artifact's producing stage
/// and its declared inputs.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineSummary, PipelineError> {
    for input in &cfg.inputs {
        if !input.is_file() {
            return Err(PipelineError::MissingInput(input.clone()));
        }
    }
    for optional in [&cfg.signatures, &cfg.templates, &cfg.failure_rules] {
        if let Some(path) = optional {
            if !path.is_file() {
                return Err(PipelineError::Config(format!(
                    "referenced file {} does not exist",
                    path.display()
                )));
            }
        }
    }
    cfg.features
        .validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;

    let signatures = match &cfg.signatures {
        Some(path) => SignatureConfig::load(path)?,
        None => SignatureConfig::bundled(),
    };
    let templates = match &cfg.templates {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|source| MailError::Io { path: path.clone(), source })?;
            crate::mailanal::parse_templates(&text)?
        }
        None => crate::mailanal::bundled_templates(),
    };
    let failure_rules = match &cfg.failure_rules {
        Some(path) => FailureRules::load(path)?,
        None => FailureRules::bundled(),
    };

    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|source| PipelineError::Write { path: cfg.out_dir.clone(), source })?;
    let mut store = ArtifactStore { dir: cfg.out_dir.clone(), entries: BTreeMap::new() };
    let mut counters = PipelineCounters::default();

    // Ingest. Flows keep capture order; the DNS map stays scoped to the
    // capture it came from.
    let mut inputs = Vec::new();
    let mut flows: Vec<Flow> = Vec::new();
    let mut dests: Vec<DestinationRecord> = Vec::new();
    let mut tags: Vec<ProtocolTag> = Vec::new();
    let appid_cfg = AppidConfig::default();
    for input in &cfg.inputs {
        let bytes = std::fs::read(input)
            .map_err(|source| PipelineError::Write { path: input.clone(), source })?;
        inputs.push(InputDigest {
            path: input.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        let ingest = ingest_capture(input, &cfg.assembly)?;
        counters.frames += ingest.counters.frames;
        counters.truncated_frames += ingest.counters.truncated;
        counters.non_ip_frames += ingest.counters.non_ip;
        counters.non_transport_frames += ingest.counters.non_transport;
        counters.dns_responses += ingest.counters.dns_responses;
        counters.clock_skew += ingest.counters.clock_skew;

        let capture_tags: Vec<ProtocolTag> =
            ingest.flows.par_iter().map(|f| identify_protocol(f, &appid_cfg)).collect();
        let capture_dests: Vec<DestinationRecord> = ingest
            .flows
            .par_iter()
            .zip(&capture_tags)
            .map(|(f, tag)| extract_destination(f, *tag, &ingest.dns, SuffixList::bundled()))
            .collect();
        flows.extend(ingest.flows);
        tags.extend(capture_tags);
        dests.extend(capture_dests);
    }
    counters.flows = flows.len() as u64;

    let mut buf = Vec::new();
    for (id, flow) in flows.iter().enumerate() {
        serde_json::to_writer(&mut buf, &FlowSummary::of(id as u64, flow))
            .map_err(io_as_write(&cfg.out_dir))?;
        buf.push(b'\n');
    }
    let capture_names: Vec<&str> = inputs.iter().map(|i| i.path.as_str()).collect();
    store.put("flows.jsonl", "ingest", &capture_names, buf)?;

    // Destinations and the protocol mix.
    let mut buf = Vec::new();
    for (id, (tag, dest)) in tags.iter().zip(&dests).enumerate() {
        let line = DestinationLine { flow_id: id as u64, protocol: tag.protocol, dest };
        serde_json::to_writer(&mut buf, &line).map_err(io_as_write(&cfg.out_dir))?;
        buf.push(b'\n');
    }
    store.put("destinations.jsonl", "appid", &["flows.jsonl"], buf)?;

    let mix = protocol_mix_report(&flows, &tags);
    let mut buf = Vec::new();
    write_mix_csv(&mix, &mut buf).map_err(|e| PipelineError::Write {
        path: cfg.out_dir.join("protocol_mix.csv"),
        source: io::Error::other(e),
    })?;
    store.put("protocol_mix.csv", "appid", &["destinations.jsonl"], buf)?;

    // Triage.
    let classes: Vec<FlowClass> = flows
        .par_iter()
        .zip(&dests)
        .map(|(flow, dest)| classify_flow(flow, dest, &signatures))
        .collect();
    let mut buf = Vec::new();
    for (id, class) in classes.iter().enumerate() {
        serde_json::to_writer(&mut buf, &TriageLine { flow_id: id as u64, class })
            .map_err(io_as_write(&cfg.out_dir))?;
        buf.push(b'\n');
    }
    store.put("triage.jsonl", "triage", &["destinations.jsonl"], buf)?;
    for class in &classes {
        match class.class {
            TriageClass::Control => counters.control_flows += 1,
            TriageClass::Tunnel => counters.tunnel_flows += 1,
            TriageClass::Relayed => counters.relayed_flows += 1,
        }
    }

    // Risk: anomaly rules (offline, so no threat verdicts) and sensitive
    // destinations; both look only at relayed flows.
    let verdicts = VerdictIndex::default();
    let mut anomalies = Vec::new();
    for ((flow, class), (dest, tag)) in
        flows.iter().zip(&classes).zip(dests.iter().zip(&tags))
    {
        if let Some(report) =
            evaluate_anomaly_rules(flow, class, dest, tag, &verdicts, None, &cfg.rules)
        {
            if report.flagged() {
                counters.flagged_flows += 1;
            }
            anomalies.push(report);
        }
    }
    let mut buf = Vec::new();
    write_anomaly_jsonl(&mut buf, &anomalies).map_err(io_as_write(&cfg.out_dir))?;
    store.put("anomalies.jsonl", "risk", &["triage.jsonl", "destinations.jsonl"], buf)?;

    let mut buf = Vec::new();
    for (id, (class, dest)) in classes.iter().zip(&dests).enumerate() {
        if class.class != TriageClass::Relayed {
            continue;
        }
        let Some(fqdn) = dest.fqdn.as_deref() else { continue };
        let hit = classify_sensitive(fqdn);
        if hit.class == SensitiveCategory::None {
            continue;
        }
        counters.sensitive_destinations += 1;
        let line = SensitiveLine { flow_id: id as u64, fqdn: &hit.fqdn, class: hit.class };
        serde_json::to_writer(&mut buf, &line).map_err(io_as_write(&cfg.out_dir))?;
        buf.push(b'\n');
    }
    store.put("sensitive.jsonl", "risk", &["triage.jsonl", "destinations.jsonl"], buf)?;

    // Mail: SMTP spam analysis and mailbox-retrieval sessions.
    let mut smtp_sessions = Vec::new();
    let mut retrieval_sessions = Vec::new();
    for ((flow, class), tag) in flows.iter().zip(&classes).zip(&tags) {
        if class.class != TriageClass::Relayed {
            continue;
        }
        match tag.protocol {
            Protocol::Smtp => smtp_sessions.push(parse_smtp_session(flow, &failure_rules)),
            Protocol::Pop3 | Protocol::Imap => match parse_mail_retrieval(flow) {
                Ok(session) => retrieval_sessions.push(session),
                Err(_) => counters.ambiguous_retrieval += 1,
            },
            _ => {}
        }
    }
    counters.smtp_sessions = smtp_sessions.len() as u64;
    counters.retrieval_sessions = retrieval_sessions.len() as u64;

    let spam = spam_report(&smtp_sessions, &templates);
    let retrieval = retrieval_report(&retrieval_sessions, counters.ambiguous_retrieval);

    let mut buf = Vec::new();
    write_smtp_jsonl(&mut buf, &smtp_sessions).map_err(io_as_write(&cfg.out_dir))?;
    store.put("smtp_sessions.jsonl", "mail", &["triage.jsonl"], buf)?;
    let mut buf = Vec::new();
    write_spam_category_csv(&mut buf, &spam).map_err(io_as_write(&cfg.out_dir))?;
    store.put("spam_categories.csv", "mail", &["smtp_sessions.jsonl"], buf)?;
    let mut buf = Vec::new();
    write_retrieval_jsonl(&mut buf, &retrieval_sessions).map_err(io_as_write(&cfg.out_dir))?;
    store.put("retrieval.jsonl", "mail", &["triage.jsonl"], buf)?;
    let mut buf = Vec::new();
    serde_json::to_writer_pretty(&mut buf, &serde_json::json!({
        "spam": &spam,
        "retrieval": &retrieval,
    }))
    .map_err(io_as_write(&cfg.out_dir))?;
    buf.push(b'\n');
    store.put("mail_summary.json", "mail", &["smtp_sessions.jsonl", "retrieval.jsonl"], buf)?;

    // Features for every flow with at least one payload packet.
    let vectors: Vec<Option<crate::features::FeatureVector>> = flows
        .par_iter()
        .map(|flow| extract_features(flow, &cfg.features).ok())
        .collect();
    let mut rows = Vec::new();
    for (id, vector) in vectors.into_iter().enumerate() {
        match vector {
            Some(v) => rows.push((id.to_string(), v)),
            None => counters.unfeaturized_flows += 1,
        }
    }
    let mut buf = Vec::new();
    write_matrix_csv(&mut buf, &cfg.features, &rows).map_err(io_as_write(&cfg.out_dir))?;
    store.put("features.csv", "features", &["flows.jsonl"], buf)?;

    let manifest = Manifest { seed: cfg.seed, inputs, artifacts: store.entries, counters };
    let path = cfg.out_dir.join("manifest.json");
    let mut buf = Vec::new();
    serde_json::to_writer_pretty(&mut buf, &manifest)
        .map_err(|source| PipelineError::Write { path: path.clone(), source: source.into() })?;
    buf.push(b'\n');
    std::fs::write(&path, &buf).map_err(|source| PipelineError::Write { path, source })?;

    Ok(PipelineSummary { out_dir: cfg.out_dir.clone(), manifest, spam, retrieval })
}

fn io_as_write<E>(dir: &Path) -> impl Fn(E) -> PipelineError + '_
where
    E: Into<Box<dyn std::error::Error + Send + Sync>>,
{
    move |e| PipelineError::Write { path: dir.to_path_buf(), source: io::Error::other(e) }
}

/// Load a run's manifest back, for comparisons and tooling.
pub fn load_manifest(dir: &Path) -> Result<Manifest, PipelineError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|source| PipelineError::Write { path: path.clone(), source })?;
    serde_json::from_str(&text)
        .map_err(|source| PipelineError::Write { path, source: io::Error::other(source) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{demo_capture_frames, write_pcap};

    fn demo_config(dir: &Path, out: &str) -> (PathBuf, PipelineConfig) {
        let capture = dir.join("demo.pcap");
        if !capture.exists() {
            write_pcap(&capture, &demo_capture_frames()).unwrap();
        }
        let cfg = PipelineConfig::new(vec![capture.clone()], dir.join(out));
        (capture, cfg)
    }

    #[test]
    fn empty_input_list_still_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::new(Vec::new(), dir.path().join("run"));
        let summary = run_pipeline(&cfg).unwrap();
        assert_eq!(summary.manifest.counters.flows, 0);
        for name in [
            "flows.jsonl",
            "destinations.jsonl",
            "protocol_mix.csv",
            "triage.jsonl",
            "anomalies.jsonl",
            "sensitive.jsonl",
            "smtp_sessions.jsonl",
            "spam_categories.csv",
            "retrieval.jsonl",
            "mail_summary.json",
            "features.csv",
        ] {
            assert!(summary.manifest.artifacts.contains_key(name), "missing {name}");
            assert!(cfg.out_dir.join(name).is_file(), "not on disk: {name}");
        }
        assert!(cfg.out_dir.join("manifest.json").is_file());
    }

    #[test]
    fn missing_input_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg =
            PipelineConfig::new(vec![dir.path().join("absent.pcap")], dir.path().join("run"));
        let err = run_pipeline(&cfg).unwrap_err();
        assert!(matches!(err, PipelineError::MissingInput(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn demo_run_covers_every_stage() {
        let dir = tempfile::tempdir().unwrap();
        let (_, cfg) = demo_config(dir.path(), "run");
        let summary = run_pipeline(&cfg).unwrap();
        let c = &summary.manifest.counters;
        assert_eq!(c.control_flows, 1);
        assert_eq!(c.tunnel_flows, 2);
        assert_eq!(c.relayed_flows, 9);
        assert_eq!(c.smtp_sessions, 2);
        assert_eq!(c.retrieval_sessions, 1);
        assert_eq!(c.sensitive_destinations, 1);
        assert!(c.flagged_flows >= 1);
        assert_eq!(summary.spam.stage_counts[3], 1, "one delivered session");
        assert_eq!(summary.spam.stage_counts[2], 1, "one rejected after data");
        assert_eq!(summary.retrieval.successful_accounts, 1);

        // The opaque high-port flow trips the port, FQDN, and protocol rules.
        let anomalies = std::fs::read_to_string(cfg.out_dir.join("anomalies.jsonl")).unwrap();
        assert!(anomalies.contains("\"port\":8444") || anomalies.contains("8444"));
        let sensitive = std::fs::read_to_string(cfg.out_dir.join("sensitive.jsonl")).unwrap();
        assert!(sensitive.contains("reemployct.dol.ct.gov"));
    }

    #[test]
    fn reruns_are_hash_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (_, cfg_a) = demo_config(dir.path(), "run-a");
        let (_, cfg_b) = demo_config(dir.path(), "run-b");
        let a = run_pipeline(&cfg_a).unwrap();
        let b = run_pipeline(&cfg_b).unwrap();
        assert_eq!(a.manifest, b.manifest);
        let raw_a = std::fs::read(cfg_a.out_dir.join("manifest.json")).unwrap();
        let raw_b = std::fs::read(cfg_b.out_dir.join("manifest.json")).unwrap();
        assert_eq!(raw_a, raw_b);
    }
}
