//! Offline forensics toolkit for residential-proxy (RESIP) exit-node traffic.
//!
//! The crate ingests packet captures recorded at RESIP nodes and takes them
//! through a processing chain:
//!
//! 1. [`capture`] — pcap/pcapng ingestion, bidirectional flow assembly, and a
//!    passive DNS IP→domain map built from responses in the same capture.
//! 2. [`appid`] — application-protocol identification and hierarchical
//!    destination extraction (IP, port, FQDN, URL, apex domain).
//! 3. [`triage`] — signature-based classification of each flow as a control,
//!    tunnel, or relayed flow with provider attribution.
//! 4. [`features`] — fixed-order statistical flow features under a
//!    configurable (N_up, N_down, N_all) scheme.
//! 5. [`forest`] — random-forest training, prediction, and mean-impurity
//!    feature ranking for relayed/tunnel flow detection.
//! 6. [`risk`] — abnormal-traffic rules, sensitive-suffix classification, and
//!    threat-intelligence verdict aggregation.
//! 7. [`mailanal`] — plaintext SMTP/IMAP/POP3 session analysis, spam template
//!    matching, and encoding-evasion normalization.
//! 8. [`correlate`] — probe-log correlation and IP-dataset overlap.
//! 9. [`pipeline`] — end-to-end orchestration with a content-hashed manifest.
//!
//! [`synth`] generates deterministic fixture captures and corpora used by the
//! test suite and the bundled demo.

pub mod appid;
pub mod capture;
pub mod correlate;
pub mod features;
pub mod forest;
pub mod mailanal;
pub mod pipeline;
pub mod risk;
pub mod synth;
pub mod triage;

pub use appid::{DestinationRecord, FqdnSource, Protocol, ProtocolTag};
pub use correlate::{CorrelationReport, MatchResult, MatchTolerance, ProbeLogEntry};
pub use capture::{
    AssemblyConfig, Direction, DnsMap, Endpoint, Flow, FlowKey, Ingest, PacketRecord, Transport,
};
pub use features::{FeatureConfig, FeatureVector};
pub use forest::{Hyperparameters, TrainingSet, TreeEnsemble};
pub use mailanal::{SmtpSession, SpamReport};
pub use pipeline::{run_pipeline, Manifest, PipelineConfig, PipelineError, PipelineSummary};
pub use risk::{AnomalyReport, SensitiveClass, ThreatVerdict};
pub use triage::{FlowClass, ProviderSignatureSet, SignatureConfig, TriageClass};
