//! Public-suffix matching for apex (registrable) domain computation.
//!
//! Implements the standard rule semantics: the prevailing rule is the
//! matching rule with the most labels, exception rules beat wildcards, and
//! an unlisted TLD behaves as a one-label suffix. The bundled snapshot is a
//! trimmed copy of the canonical list; callers can layer extra rules on top
//! for suffixes the snapshot lacks.
//!
//! Names are matched as lowercase ASCII; internationalized labels must
//! already be punycoded, as they appear on the wire.

use std::collections::HashMap;
use std::sync::OnceLock;

const SNAPSHOT: &str = include_str!("suffix_snapshot.dat");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rule {
    Normal,
    Exception,
}

/// A compiled public-suffix rule set.
#[derive(Debug, Clone, Default)]
pub struct SuffixList {
    /// Keyed by the rule text without any "!" marker; wildcards keep "*".
    rules: HashMap<String, Rule>,
}

impl SuffixList {
    /// Parse rules in the standard list format, one per line.
    pub fn from_rules(text: &str) -> SuffixList {
        let mut list = SuffixList::default();
        list.add_rules(text);
        list
    }

    /// Append rules; later duplicates replace earlier ones.
    pub fn add_rules(&mut self, text: &str) {
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            let (kind, rule) = match line.strip_prefix('!') {
                Some(r) => (Rule::Exception, r),
                None => (Rule::Normal, line),
            };
            self.rules.insert(rule.to_lowercase(), kind);
        }
    }

    /// The bundled snapshot, compiled once.
    pub fn bundled() -> &'static SuffixList {
        static LIST: OnceLock<SuffixList> = OnceLock::new();
        LIST.get_or_init(|| SuffixList::from_rules(SNAPSHOT))
    }

    /// Bundled snapshot plus override rules.
    pub fn bundled_with(overrides: &str) -> SuffixList {
        let mut list = SuffixList::bundled().clone();
        list.add_rules(overrides);
        list
    }

    /// Number of labels in the public suffix of `name`, or None for an
    /// unusable name (empty labels, no dot content at all).
    fn suffix_labels(&self, labels: &[&str]) -> usize {
        let n = labels.len();
        let mut best = 1usize; // implicit "*" rule: the TLD itself
        for start in 0..n {
            let tail = labels[start..].join(".");
            if let Some(rule) = self.rules.get(&tail) {
                match rule {
                    // Exception: the suffix is the rule minus its own
                    // leftmost label.
                    Rule::Exception => return n - start - 1,
                    Rule::Normal => best = best.max(n - start),
                }
            }
            if start > 0 {
                let wild = format!("*.{}", labels[start..].join("."));
                if self.rules.get(&wild) == Some(&Rule::Normal) {
                    best = best.max(n - start + 1);
                }
            }
        }
        best
    }

    /// The registrable (apex) domain: public suffix plus one label. Returns
    /// None when the name is itself a public suffix or malformed.
    pub fn registrable(&self, fqdn: &str) -> Option<String> {
        let name = fqdn.trim_end_matches('.').to_lowercase();
        if name.is_empty() {
            return None;
        }
        let labels: Vec<&str> = name.split('.').collect();
        if labels.iter().any(|l| l.is_empty()) {
            return None;
        }
        let suffix = self.suffix_labels(&labels);
        if labels.len() <= suffix {
            return None;
        }
        Some(labels[labels.len() - suffix - 1..].join("."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apex(name: &str) -> Option<String> {
        SuffixList::bundled().registrable(name)
    }

    #[test]
    fn plain_gtld() {
        assert_eq!(apex("www.amazon.com").as_deref(), Some("amazon.com"));
        assert_eq!(apex("amazon.com").as_deref(), Some("amazon.com"));
        assert_eq!(apex("a.b.c.example.org").as_deref(), Some("example.org"));
    }

    #[test]
    fn second_level_registry() {
        assert_eq!(apex("shop.amazon.co.uk").as_deref(), Some("amazon.co.uk"));
        assert_eq!(apex("www.city.lg.jp").as_deref(), Some("city.lg.jp"));
    }

    #[test]
    fn suffix_itself_has_no_apex() {
        assert_eq!(apex("co.uk"), None);
        assert_eq!(apex("com"), None);
    }

    #[test]
    fn wildcard_and_exception_rules() {
        // *.ck makes bar.ck a suffix; !www.ck carves out www.ck.
        assert_eq!(apex("foo.bar.ck").as_deref(), Some("foo.bar.ck"));
        assert_eq!(apex("bar.ck"), None);
        assert_eq!(apex("www.ck").as_deref(), Some("www.ck"));
        assert_eq!(apex("sub.www.ck").as_deref(), Some("www.ck"));
    }

    #[test]
    fn unlisted_tld_defaults_to_one_label() {
        assert_eq!(apex("host.internal").as_deref(), Some("host.internal"));
        assert_eq!(apex("deep.host.internal").as_deref(), Some("host.internal"));
    }

    #[test]
    fn private_registry_suffixes() {
        assert_eq!(apex("user.github.io").as_deref(), Some("user.github.io"));
        assert_eq!(
            apex("bucket.s3.amazonaws.com").as_deref(),
            Some("bucket.s3.amazonaws.com")
        );
    }

    #[test]
    fn trailing_dot_and_case_are_normalized() {
        assert_eq!(apex("WWW.Amazon.COM.").as_deref(), Some("amazon.com"));
    }

    #[test]
    fn malformed_names_have_no_apex() {
        assert_eq!(apex(""), None);
        assert_eq!(apex("a..b"), None);
        assert_eq!(apex("single"), None);
    }

    #[test]
    fn overrides_extend_the_snapshot() {
        let list = SuffixList::bundled_with("custom.suffix\n// comment\n");
        assert_eq!(
            list.registrable("x.custom.suffix").as_deref(),
            Some("x.custom.suffix")
        );
        assert_eq!(
            SuffixList::bundled().registrable("x.custom.suffix").as_deref(),
            Some("custom.suffix")
        );
    }
}
