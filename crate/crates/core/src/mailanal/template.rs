//! Spam template catalog and matcher. A template is an ordered sequence
//! of literal segments with wildcard and alternation slots, expressed in
//! a one-line-per-template text format:
//!
//! ```text
//! # id category: pattern
//! ad-17 advertisement: i have attached your {invitation|invite}
//! mal-02 malware-distribution: download * invoice
//! ```
//!
//! Matching runs over text already normalized by the evasion decoder, so
//! patterns are stored lowercased with collapsed whitespace. Segments
//! match unanchored and in order; `*` separates adjacent literals so a
//! gap is allowed between them, and `{a|b}` matches whichever variant
//! ends earliest.

use serde::{Deserialize, Serialize};

use crate::mailanal::MailError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateCategory {
    Advertisement,
    MalwareDistribution,
}

impl TemplateCategory {
    pub const ALL: [TemplateCategory; 2] =
        [TemplateCategory::Advertisement, TemplateCategory::MalwareDistribution];

    pub fn display_name(&self) -> &'static str {
        match self {
            TemplateCategory::Advertisement => "Advertisement",
            TemplateCategory::MalwareDistribution => "Malware Distribution",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Literal(String),
    Any,
    Alt(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpamTemplate {
    pub id: String,
    pub category: TemplateCategory,
    pub slots: Vec<Slot>,
}

impl SpamTemplate {
    /// Parse one pattern string into slots, normalizing literals the same
    /// way the evasion decoder normalizes text.
    pub fn new(id: &str, category: TemplateCategory, pattern: &str) -> Result<Self, MailError> {
        let mut slots = Vec::new();
        let mut literal = String::new();
        let mut chars = pattern.chars();
        while let Some(c) = chars.next() {
            match c {
                '*' => {
                    flush_literal(&mut slots, &mut literal);
                    slots.push(Slot::Any);
                }
                '{' => {
                    flush_literal(&mut slots, &mut literal);
                    let mut body = String::new();
                    let mut closed = false;
                    for inner in chars.by_ref() {
                        if inner == '}' {
                            closed = true;
                            break;
                        }
                        body.push(inner);
                    }
                    if !closed {
                        return Err(MailError::Template {
                            id: id.to_string(),
                            detail: "unterminated alternation".to_string(),
                        });
                    }
                    let variants: Vec<String> =
                        body.split('|').map(normalize).filter(|v| !v.is_empty()).collect();
                    if variants.is_empty() {
                        return Err(MailError::Template {
                            id: id.to_string(),
                            detail: "empty alternation".to_string(),
                        });
                    }
                    slots.push(Slot::Alt(variants));
                }
                _ => literal.push(c),
            }
        }
        flush_literal(&mut slots, &mut literal);
        if slots.is_empty() {
            return Err(MailError::Template {
                id: id.to_string(),
                detail: "empty pattern".to_string(),
            });
        }
        Ok(SpamTemplate { id: id.to_string(), category, slots })
    }

    /// True when every slot matches in order, unanchored.
    pub fn matches(&self, text: &str) -> bool {
        let mut pos = 0;
        for slot in &self.slots {
            match slot {
                Slot::Any => {}
                Slot::Literal(lit) => match text[pos..].find(lit.as_str()) {
                    Some(at) => pos += at + lit.len(),
                    None => return false,
                },
                Slot::Alt(variants) => {
                    let earliest_end = variants
                        .iter()
                        .filter_map(|v| text[pos..].find(v.as_str()).map(|at| at + v.len()))
                        .min();
                    match earliest_end {
                        Some(end) => pos += end,
                        None => return false,
                    }
                }
            }
        }
        true
    }
}

fn flush_literal(slots: &mut Vec<Slot>, literal: &mut String) {
    let text = normalize(literal.as_str());
    if !text.is_empty() {
        slots.push(Slot::Literal(text));
    }
    literal.clear();
}

fn normalize(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

const DEFAULT_TEMPLATES: &str = include_str!("default_templates.txt");

/// Parse the plain text catalog format. Blank lines and `#` comments are
/// skipped. Each line reads `id category: pattern`.
pub fn parse_templates(text: &str) -> Result<Vec<SpamTemplate>, MailError> {
    let mut templates = Vec::new();
    for (number, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |detail: &str| MailError::Template {
            id: format!("line {}", number + 1),
            detail: detail.to_string(),
        };
        let (header, pattern) = line.split_once(':').ok_or_else(|| bad("missing ':'"))?;
        let mut words = header.split_whitespace();
        let id = words.next().ok_or_else(|| bad("missing id"))?;
        let category = match words.next() {
            Some("advertisement") => TemplateCategory::Advertisement,
            Some("malware-distribution") => TemplateCategory::MalwareDistribution,
            other => return Err(bad(&format!("bad category {other:?}"))),
        };
        templates.push(SpamTemplate::new(id, category, pattern)?);
    }
    Ok(templates)
}

/// The small demonstration catalog shipped with the toolkit.
pub fn bundled_templates() -> Vec<SpamTemplate> {
    parse_templates(DEFAULT_TEMPLATES).expect("bundled templates parse")
}

/// Ids of every template matching the normalized text, in catalog order.
pub fn match_templates<'t>(text: &str, templates: &'t [SpamTemplate]) -> Vec<&'t str> {
    templates.iter().filter(|t| t.matches(text)).map(|t| t.id.as_str()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paraphrase_family_matches_through_one_alternation() {
        let template = SpamTemplate::new(
            "ad-1",
            TemplateCategory::Advertisement,
            "{i have attached your invitation|your invite is attached|the invite is attached}",
        )
        .unwrap();
        for text in [
            "hello, i have attached your invitation to the event",
            "your invite is attached below",
            "note: the invite is attached",
        ] {
            assert!(template.matches(text), "{text}");
        }
        assert!(!template.matches("no invitation to be found here"));
    }

    #[test]
    fn segments_must_appear_in_order() {
        let template =
            SpamTemplate::new("ad-2", TemplateCategory::Advertisement, "claim * prize now")
                .unwrap();
        assert!(template.matches("claim your grand prize now"));
        assert!(template.matches("claim prize now"));
        assert!(!template.matches("now claim a prize"));
    }

    #[test]
    fn empty_template_list_matches_nothing() {
        assert!(match_templates("anything at all", &[]).is_empty());
    }

    #[test]
    fn catalog_lines_parse_ids_categories_and_slots() {
        let catalog = "\
# demo
ad-1 advertisement: buy {cheap|discount} meds *
mal-1 malware-distribution: download * invoice
";
        let templates = parse_templates(catalog).unwrap();
        assert_eq!(templates.len(), 2);
        assert_eq!(templates[0].id, "ad-1");
        assert_eq!(templates[0].category, TemplateCategory::Advertisement);
        assert_eq!(
            templates[0].slots,
            vec![
                Slot::Literal("buy".to_string()),
                Slot::Alt(vec!["cheap".to_string(), "discount".to_string()]),
                Slot::Literal("meds".to_string()),
                Slot::Any,
            ]
        );
        assert_eq!(templates[1].category, TemplateCategory::MalwareDistribution);
    }

    #[test]
    fn malformed_catalog_lines_are_rejected() {
        assert!(parse_templates("ad-1 advertisement buy meds").is_err());
        assert!(parse_templates("ad-1 junk-category: buy meds").is_err());
        assert!(parse_templates("ad-1 advertisement: {never closed").is_err());
        assert!(parse_templates("ad-1 advertisement:    ").is_err());
    }

    #[test]
    fn planted_corpus_matches_exactly_the_planted_ids() {
        let templates = vec![
            SpamTemplate::new("ad-1", TemplateCategory::Advertisement, "limited time offer")
                .unwrap(),
            SpamTemplate::new("ad-2", TemplateCategory::Advertisement, "act {now|today}")
                .unwrap(),
            SpamTemplate::new("mal-1", TemplateCategory::MalwareDistribution, "open the * attachment")
                .unwrap(),
        ];
        let corpus: Vec<(&str, Vec<&str>)> = vec![
            ("this limited time offer ends soon", vec!["ad-1"]),
            ("act today to claim", vec!["ad-2"]),
            ("please open the pdf attachment", vec!["mal-1"]),
            ("limited time offer, act now", vec!["ad-1", "ad-2"]),
            ("nothing suspicious here", vec![]),
        ];
        for (text, want) in corpus {
            assert_eq!(match_templates(text, &templates), want, "{text}");
        }
    }

    #[test]
    fn bundled_catalog_parses_and_covers_both_categories() {
        let templates = bundled_templates();
        assert!(!templates.is_empty());
        for category in TemplateCategory::ALL {
            assert!(
                templates.iter().any(|t| t.category == category),
                "missing {category:?}"
            );
        }
    }
}
