//! Sensitive-destination classification. Government, military, and
//! education sites advertise themselves through their domain labels (gov,
//! mil, edu), either as the top-level suffix or under a country code such
//! as gov.cn or edu.cn. The scan runs right to left so the suffix-most
//! marker decides when several appear.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitiveCategory {
    Government,
    Military,
    Education,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensitiveClass {
    pub fqdn: String,
    pub class: SensitiveCategory,
}

/// Pure label scan; total over every string. The stored fqdn is the
/// normalized (lowercased, dot-trimmed) form. Only the suffix region is
/// examined: the final label, plus the one before it when the final label
/// is a two-letter country code. A host merely named gov deeper in the
/// name stays unclassified.
pub fn classify_sensitive(fqdn: &str) -> SensitiveClass {
    let normalized = fqdn.trim_end_matches('.').to_ascii_lowercase();
    let mut labels = normalized.rsplit('.');
    let tld = labels.next().unwrap_or("");
    let mut class = marker(tld);
    if class == SensitiveCategory::None
        && tld.len() == 2
        && tld.bytes().all(|b| b.is_ascii_lowercase())
    {
        if let Some(second) = labels.next() {
            class = marker(second);
        }
    }
    SensitiveClass { fqdn: normalized, class }
}

fn marker(label: &str) -> SensitiveCategory {
    match label {
        "gov" => SensitiveCategory::Government,
        "mil" => SensitiveCategory::Military,
        "edu" => SensitiveCategory::Education,
        _ => SensitiveCategory::None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn marker_labels_classify_by_suffix() {
        let cases = [
            ("reemployct.dol.ct.gov", SensitiveCategory::Government),
            ("www.example.com", SensitiveCategory::None),
            ("cs.university.edu.cn", SensitiveCategory::Education),
            ("www.army.mil", SensitiveCategory::Military),
            ("mail.mod.gov.uk", SensitiveCategory::Government),
            ("gov.example.org", SensitiveCategory::None),
        ];
        for (fqdn, want) in cases {
            assert_eq!(classify_sensitive(fqdn).class, want, "{fqdn}");
        }
    }

    #[test]
    fn suffix_most_marker_wins() {
        // Both markers present: the one nearer the root decides.
        assert_eq!(classify_sensitive("gov.edu.cn").class, SensitiveCategory::Education);
        assert_eq!(classify_sensitive("edu.gov.cn").class, SensitiveCategory::Government);
    }

    #[test]
    fn normalization_handles_case_and_trailing_dot() {
        let got = classify_sensitive("WWW.State.GOV.");
        assert_eq!(got.class, SensitiveCategory::Government);
        assert_eq!(got.fqdn, "www.state.gov");
    }

    #[test]
    fn total_over_arbitrary_inputs_and_deterministic() {
        let mut rng = crate::synth::rng(9);
        let alphabet: Vec<char> = "abgovmiledu.-0".chars().collect();
        for _ in 0..500 {
            let len = rng.random_range(0..24);
            let s: String =
                (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
            let first = classify_sensitive(&s);
            assert_eq!(first, classify_sensitive(&s));
        }
        assert_eq!(classify_sensitive("").class, SensitiveCategory::None);
        assert_eq!(classify_sensitive("...").class, SensitiveCategory::None);
    }
}
