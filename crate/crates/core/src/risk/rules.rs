//! The abnormal-traffic rule engine. Five rules run against every relayed
//! flow; any hit flags the flow for manual review. Rules are independent:
//! each looks at its own slice of the inputs and nothing else.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::appid::{DestinationRecord, ProtocolTag};
use crate::capture::{Flow, FlowKey};
use crate::risk::intel::VerdictIndex;
use crate::triage::{FlowClass, TriageClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyRule {
    /// R1: a destination address carries one or more threat alerts.
    ThreatAlert,
    /// R2: the destination port is outside the common-port set.
    UncommonPort,
    /// R3: no FQDN could be attached to the destination.
    NoFqdn,
    /// R4: the application protocol is not a widespread web protocol.
    NonWebProtocol,
    /// R5: not every required capture location observed the destination.
    LocationAsymmetric,
}

impl AnomalyRule {
    pub fn code(&self) -> &'static str {
        match self {
            AnomalyRule::ThreatAlert => "R1",
            AnomalyRule::UncommonPort => "R2",
            AnomalyRule::NoFqdn => "R3",
            AnomalyRule::NonWebProtocol => "R4",
            AnomalyRule::LocationAsymmetric => "R5",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleHit {
    pub rule: AnomalyRule,
    pub evidence: String,
}

/// Rule outcome for one relayed flow. A flow is flagged exactly when at
/// least one rule matched; rules that could not run are listed separately
/// rather than counted as clean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub key: FlowKey,
    pub matched: Vec<RuleHit>,
    pub not_evaluated: Vec<AnomalyRule>,
}

impl AnomalyReport {
    pub fn flagged(&self) -> bool {
        !self.matched.is_empty()
    }

    pub fn matches(&self, rule: AnomalyRule) -> bool {
        self.matched.iter().any(|hit| hit.rule == rule)
    }
}

/// Ports considered ordinary destinations. The default covers the classic
/// assigned services; deployments can widen or narrow it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub common_ports: BTreeSet<u16>,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            common_ports: [21, 22, 25, 53, 80, 110, 143, 443, 465, 587, 993, 995]
                .into_iter()
                .collect(),
        }
    }
}

/// Which capture locations observed each destination IP. R5 fires when a
/// destination is missing from any required location.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationIndex {
    required: BTreeSet<String>,
    seen: BTreeMap<IpAddr, BTreeSet<String>>,
}

impl LocationIndex {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(required: I) -> Self {
        LocationIndex {
            required: required.into_iter().map(Into::into).collect(),
            seen: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, ip: IpAddr, location: &str) {
        self.seen.entry(ip).or_default().insert(location.to_string());
    }

    /// Required locations that did not observe `ip`, sorted.
    pub fn missing(&self, ip: IpAddr) -> Vec<&str> {
        let seen = self.seen.get(&ip);
        self.required
            .iter()
            .filter(|loc| seen.map_or(true, |set| !set.contains(*loc)))
            .map(String::as_str)
            .collect()
    }
}

/// Run R1..R5 against one classified flow. Returns None for control and
/// tunnel flows; the rules are defined over relayed traffic only.
pub fn evaluate_anomaly_rules(
    flow: &Flow,
    class: &FlowClass,
    dest: &DestinationRecord,
    tag: &ProtocolTag,
    verdicts: &VerdictIndex,
    locations: Option<&LocationIndex>,
    cfg: &RuleConfig,
) -> Option<AnomalyReport> {
    if class.class != TriageClass::Relayed {
        return None;
    }
    let mut matched = Vec::new();
    let mut not_evaluated = Vec::new();

    let mut alerts = Vec::new();
    let addresses = [
        Some(dest.ip.to_string()),
        dest.fqdn.clone(),
        dest.url.clone(),
    ];
    for address in addresses.into_iter().flatten() {
        let providers = verdicts.alerting_providers(&address);
        if !providers.is_empty() {
            alerts.push(format!("{address} alerted by {}", providers.join(", ")));
        }
    }
    if !alerts.is_empty() {
        matched.push(RuleHit { rule: AnomalyRule::ThreatAlert, evidence: alerts.join("; ") });
    }

    if !cfg.common_ports.contains(&dest.port) {
        matched.push(RuleHit {
            rule: AnomalyRule::UncommonPort,
            evidence: format!("destination port {} is outside the common-port set", dest.port),
        });
    }

    if dest.fqdn.is_none() {
        matched.push(RuleHit {
            rule: AnomalyRule::NoFqdn,
            evidence: "no FQDN from host header, SNI, or DNS responses".to_string(),
        });
    }

    if !tag.protocol.is_web() {
        matched.push(RuleHit {
            rule: AnomalyRule::NonWebProtocol,
            evidence: format!("{} is not a widespread web protocol", tag.protocol.name()),
        });
    }

    match locations {
        None => not_evaluated.push(AnomalyRule::LocationAsymmetric),
        Some(index) => {
            let missing = index.missing(dest.ip);
            if !missing.is_empty() {
                matched.push(RuleHit {
                    rule: AnomalyRule::LocationAsymmetric,
                    evidence: format!(
                        "destination {} not observed at: {}",
                        dest.ip,
                        missing.join(", ")
                    ),
                });
            }
        }
    }

    Some(AnomalyReport { key: flow.key.clone(), matched, not_evaluated })
}

/// One JSON object per line, matched flows only.
pub fn write_anomaly_jsonl<W: io::Write>(
    out: &mut W,
    reports: &[AnomalyReport],
) -> io::Result<()> {
    for report in reports.iter().filter(|r| r.flagged()) {
        serde_json::to_writer(&mut *out, report)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
