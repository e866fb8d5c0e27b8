//! Live HTTP adapters for the bundled threat-intelligence providers.
//!
//! Everything here talks to external services, so the module is gated
//! behind the `online` feature and nothing in the test suite depends on
//! it. Credentials come from the environment variables named in the
//! provider config; the secret itself never appears in config files or
//! output.

use std::time::Duration;

use base64::Engine as _;
use ureq::Agent;

use super::intel::{
    interpret_urlhaus, interpret_virustotal, interpret_xforce, AddressKind, IntelConfig,
    ProviderError, ProviderOutcome, ProviderSpec, ThreatProvider,
};

const REQUEST_TIMEOUT: Duration = Duration::from_secs(30);

/// One configured HTTP provider. The adapter is picked by the spec's name;
/// unrecognized names fail at query time rather than at construction so a
/// config typo surfaces as a per-provider warning, not a crash.
pub struct OnlineProvider {
    spec: ProviderSpec,
    credential: Option<String>,
    agent: Agent,
}

impl OnlineProvider {
    /// Build from a spec, reading the credential from the environment. A
    /// spec that names a credential variable which is unset or empty is a
    /// credential error: the caller can skip the provider or abort.
    pub fn from_spec(spec: &ProviderSpec) -> Result<Self, ProviderError> {
        let credential = match &spec.credential_env {
            Some(var) => match std::env::var(var) {
                Ok(value) if !value.is_empty() => Some(value),
                _ => {
                    return Err(ProviderError::Credential(format!(
                        "{} is not set",
                        var
                    )))
                }
            },
            None => None,
        };
        let agent = Agent::new_with_config(
            Agent::config_builder()
                .timeout_global(Some(REQUEST_TIMEOUT))
                .build(),
        );
        Ok(OnlineProvider { spec: spec.clone(), credential, agent })
    }

    /// Build every provider in the config that has its credentials
    /// available, warning about the ones that do not.
    pub fn from_config(config: &IntelConfig) -> Vec<OnlineProvider> {
        let mut providers = Vec::new();
        for spec in &config.providers {
            match OnlineProvider::from_spec(spec) {
                Ok(provider) => providers.push(provider),
                Err(err) => log::warn!("skipping provider {}: {err}", spec.name),
            }
        }
        providers
    }

    fn get_json(&self, url: &str) -> Result<serde_json::Value, ProviderError> {
        let mut request = self.agent.get(url);
        match self.spec.name.as_str() {
            "VirusTotal" => {
                let key = self.credential.as_deref().unwrap_or_default();
                request = request.header("x-apikey", key);
            }
            "IBM X-Force" => {
                let raw = self.credential.as_deref().unwrap_or_default();
                let token = base64::engine::general_purpose::STANDARD.encode(raw);
                request = request.header("Authorization", &format!("Basic {token}"));
            }
            _ => {}
        }
        let mut response = request.call().map_err(map_transport)?;
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|err| ProviderError::Transport(err.to_string()))?;
        serde_json::from_str(&text)
            .map_err(|err| ProviderError::Transport(format!("bad response body: {err}")))
    }

    fn query_virustotal(
        &self,
        address: &str,
        kind: AddressKind,
    ) -> Result<(ProviderOutcome, Vec<String>), ProviderError> {
        let path = match kind {
            AddressKind::Ip => format!("ip_addresses/{address}"),
            AddressKind::Fqdn => format!("domains/{address}"),
            AddressKind::Url => {
                let id = base64::engine::general_purpose::URL_SAFE_NO_PAD.encode(address);
                format!("urls/{id}")
            }
        };
        match self.get_json(&format!("{}/{}", self.spec.endpoint, path)) {
            Ok(doc) => Ok(interpret_virustotal(&doc)),
            // No report means the address was never analyzed.
            Err(ProviderError::Transport(detail)) if detail.contains("status 404") => {
                Ok((ProviderOutcome::Unknown, Vec::new()))
            }
            Err(err) => Err(err),
        }
    }

    fn query_xforce(
        &self,
        address: &str,
        kind: AddressKind,
    ) -> Result<(ProviderOutcome, Vec<String>), ProviderError> {
        let path = match kind {
            AddressKind::Ip => format!("ipr/{address}"),
            AddressKind::Fqdn | AddressKind::Url => {
                format!("url/{}", percent_encode(address))
            }
        };
        match self.get_json(&format!("{}/{}", self.spec.endpoint, path)) {
            Ok(doc) => Ok(interpret_xforce(&doc)),
            Err(ProviderError::Transport(detail)) if detail.contains("status 404") => {
                Ok((ProviderOutcome::Unknown, Vec::new()))
            }
            Err(err) => Err(err),
        }
    }

    fn query_urlhaus(
        &self,
        address: &str,
        kind: AddressKind,
    ) -> Result<(ProviderOutcome, Vec<String>), ProviderError> {
        let (path, field) = match kind {
            AddressKind::Url => ("url", "url"),
            _ => ("host", "host"),
        };
        let url = format!("{}/{}/", self.spec.endpoint, path);
        let mut response = self
            .agent
            .post(&url)
            .send_form([(field, address)])
            .map_err(map_transport)?;
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|err| ProviderError::Transport(err.to_string()))?;
        let doc: serde_json::Value = serde_json::from_str(&text)
            .map_err(|err| ProviderError::Transport(format!("bad response body: {err}")))?;
        Ok(interpret_urlhaus(&doc))
    }
}

impl ThreatProvider for OnlineProvider {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn supports(&self, kind: AddressKind) -> bool {
        self.spec.kinds.contains(&kind)
    }

    fn rate_per_sec(&self) -> f64 {
        self.spec.rate_per_sec
    }

    fn query(
        &self,
        address: &str,
        kind: AddressKind,
    ) -> Result<(ProviderOutcome, Vec<String>), ProviderError> {
        match self.spec.name.as_str() {
            "VirusTotal" => self.query_virustotal(address, kind),
            "IBM X-Force" => self.query_xforce(address, kind),
            "URLhaus" => self.query_urlhaus(address, kind),
            other => Err(ProviderError::Transport(format!("no adapter for provider {other}"))),
        }
    }
}

fn map_transport(err: ureq::Error) -> ProviderError {
    match err {
        ureq::Error::StatusCode(401) | ureq::Error::StatusCode(403) => {
            ProviderError::Credential(err.to_string())
        }
        ureq::Error::StatusCode(code) => ProviderError::Transport(format!("status {code}")),
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        other => ProviderError::Transport(other.to_string()),
    }
}

/// Encode an address for use as a single path segment.
fn percent_encode(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for byte in raw.bytes() {
        match byte {
            b'a'..=b'z' | b'A'..=b'Z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' => {
                out.push(byte as char)
            }
            _ => out.push_str(&format!("%{byte:02X}")),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_segments_escape_reserved_bytes() {
        assert_eq!(percent_encode("example.com"), "example.com");
        assert_eq!(
            percent_encode("http://a.example/x?q=1"),
            "http%3A%2F%2Fa.example%2Fx%3Fq%3D1"
        );
    }

    #[test]
    fn missing_credential_is_a_credential_error() {
        let spec = ProviderSpec {
            name: "VirusTotal".to_string(),
            endpoint: "https://example.invalid".to_string(),
            rate_per_sec: 1.0,
            credential_env: Some("RESIPSCOPE_TEST_UNSET_CREDENTIAL".to_string()),
            kinds: vec![AddressKind::Ip],
        };
        match OnlineProvider::from_spec(&spec) {
            Err(ProviderError::Credential(_)) => {}
            Err(other) => panic!("expected credential error, got {other}"),
            Ok(_) => panic!("expected credential error, got a provider"),
        }
    }
}
