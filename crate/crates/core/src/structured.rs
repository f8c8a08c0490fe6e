//! The structured output grammar:
//!
//! ```text
//! <think>{trace}</think>
//! Label: {hateful|not_hateful}
//! Explanation: {rationale}
//! ```
//!
//! Parsing is permissive about case and separators; serialization always
//! emits the canonical form above.

use alloc::format;
use alloc::string::{String, ToString};
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const LABEL_MARKER: &str = "Label:";
pub const EXPLANATION_MARKER: &str = "Explanation:";

/// A parsed model output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredOutput {
    pub think: String,
    pub label: Label,
    pub explanation: String,
    pub raw: String,
}

/// Which structural rules a text satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FormatReport {
    pub has_think_block: bool,
    pub think_well_nested: bool,
    pub has_label_field: bool,
    pub label_parseable: bool,
    pub has_explanation: bool,
    pub compliant: bool,
}

impl FormatReport {
    pub fn flags(&self) -> [bool; 5] {
        [
            self.has_think_block,
            self.think_well_nested,
            self.has_label_field,
            self.label_parseable,
            self.has_explanation,
        ]
    }

    /// Share of the five structural rules that hold.
    pub fn satisfied_fraction(&self) -> f64 {
        self.flags().iter().filter(|f| **f).count() as f64 / 5.0
    }
}

impl StructuredOutput {
    /// Builds an output whose `raw` text is its canonical serialization.
    pub fn new(think: impl Into<String>, label: Label, explanation: impl Into<String>) -> Self {
        let mut out = Self {
            think: think.into(),
            label,
            explanation: explanation.into(),
            raw: String::new(),
        };
        out.raw = serialize(&out);
        out
    }

    /// True when `serialize` followed by `parse` reproduces these fields.
    pub fn is_valid(&self) -> bool {
        let clean = |s: &str| s == s.trim() && !contains_delimiter(s);
        clean(&self.explanation)
            && !self.explanation.is_empty()
            && self.think == self.think.trim()
            && !contains_ci(&self.think, THINK_OPEN)
            && !contains_ci(&self.think, THINK_CLOSE)
    }
}

fn contains_ci(haystack: &str, needle: &str) -> bool {
    find_ci(haystack, needle, 0).is_some()
}

/// ASCII case-insensitive search starting at byte offset `from`.
fn find_ci(haystack: &str, needle: &str, from: usize) -> Option<usize> {
    let h = haystack.as_bytes();
    let n = needle.as_bytes();
    if n.is_empty() || h.len() < n.len() {
        return None;
    }
    (from..=h.len() - n.len()).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

fn contains_delimiter(s: &str) -> bool {
    [THINK_OPEN, THINK_CLOSE, LABEL_MARKER, EXPLANATION_MARKER]
        .iter()
        .any(|d| contains_ci(s, d))
}

/// Canonical rendering.
pub fn serialize(output: &StructuredOutput) -> String {
    format!(
        "{THINK_OPEN}{}{THINK_CLOSE}\n{LABEL_MARKER} {}\n{EXPLANATION_MARKER} {}",
        output.think, output.label, output.explanation
    )
}

/// Every field that could be isolated from a text, compliant or not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scan<'a> {
    pub report: FormatReport,
    pub think: Option<&'a str>,
    pub label: Option<Label>,
    pub explanation: Option<&'a str>,
}

/// Finds a label marker at a line start (or at `start` itself) at or after `start`.
fn find_label_marker(text: &str, start: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut from = start;
    while let Some(i) = find_ci(text, LABEL_MARKER, from) {
        let prefix = &text[start..i];
        let at_line_start = prefix.trim().is_empty()
            || text[..i]
                .bytes()
                .rev()
                .take_while(|b| *b != b'\n')
                .all(|b| b == b' ' || b == b'\t' || b == b'\r');
        if at_line_start {
            return Some(i);
        }
        from = i + 1;
        if from >= bytes.len() {
            break;
        }
    }
    None
}

/// Lenient structural scan shared by [`parse`], [`check_format`] and the rewards.
pub fn scan(text: &str) -> Scan<'_> {
    let mut report = FormatReport::default();
    let opens = count_ci(text, THINK_OPEN);
    let closes = count_ci(text, THINK_CLOSE);

    let lead = text.len() - text.trim_start().len();
    let starts_with_open = text[lead..]
        .get(..THINK_OPEN.len())
        .is_some_and(|s| s.eq_ignore_ascii_case(THINK_OPEN));

    let mut think = None;
    let mut rest_start = 0;
    if starts_with_open {
        let body = lead + THINK_OPEN.len();
        if let Some(close) = find_ci(text, THINK_CLOSE, body) {
            report.has_think_block = true;
            think = Some(text[body..close].trim());
            rest_start = close + THINK_CLOSE.len();
        }
    }
    report.think_well_nested = match (opens, closes) {
        (0, 0) => true,
        (1, 1) => report.has_think_block,
        _ => false,
    };

    let mut label = None;
    let mut explanation = None;
    if let Some(lm) = find_label_marker(text, rest_start) {
        report.has_label_field = true;
        let value_start = lm + LABEL_MARKER.len();
        let em = find_ci(text, EXPLANATION_MARKER, value_start);
        let value_end = match em {
            Some(e) => e,
            None => text[value_start..].find('\n').map_or(text.len(), |n| value_start + n),
        };
        label = Label::from_str(text[value_start..value_end].trim()).ok();
        report.label_parseable = label.is_some();
        if let Some(e) = em {
            let e_text = text[e + EXPLANATION_MARKER.len()..].trim();
            if !e_text.is_empty() {
                explanation = Some(e_text);
                report.has_explanation = !contains_delimiter(e_text);
            }
        }
    }
    report.compliant = report.flags().iter().all(|f| *f);
    Scan { report, think, label, explanation }
}

fn count_ci(text: &str, needle: &str) -> usize {
    let mut n = 0;
    let mut from = 0;
    while let Some(i) = find_ci(text, needle, from) {
        n += 1;
        from = i + needle.len();
    }
    n
}

/// Parses a fully compliant output, or reports every violated rule.
pub fn parse(text: &str) -> Result<StructuredOutput, FormatReport> {
    let s = scan(text);
    if !s.report.compliant {
        return Err(s.report);
    }
    // Compliance guarantees all three fields were isolated.
    match (s.think, s.label, s.explanation) {
        (Some(think), Some(label), Some(explanation)) => Ok(StructuredOutput {
            think: think.to_string(),
            label,
            explanation: explanation.to_string(),
            raw: text.to_string(),
        }),
        _ => Err(s.report),
    }
}

pub fn check_format(text: &str) -> FormatReport {
    scan(text).report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_line_form() {
        let o = parse("<think>steps</think> Label: hateful Explanation: mocks a protected group.")
            .unwrap();
        assert_eq!(o.think, "steps");
        assert_eq!(o.label, Label::Hateful);
        assert_eq!(o.explanation, "mocks a protected group.");
    }

    #[test]
    fn empty_think_is_allowed() {
        let o = parse("<think></think> Label: not_hateful Explanation: benign joke.").unwrap();
        assert_eq!(o.think, "");
        assert_eq!(o.label, Label::NonHateful);
        let s = serialize(&StructuredOutput::new("", Label::NonHateful, "benign joke."));
        assert!(s.starts_with("<think></think>\n"));
    }

    #[test]
    fn serializes_canonically() {
        let o = StructuredOutput::new("x", Label::Hateful, "y");
        assert_eq!(serialize(&o), "<think>x</think>\nLabel: hateful\nExplanation: y");
        assert_eq!(parse(&o.raw).unwrap(), o);
    }

    #[test]
    fn missing_sections_are_reported() {
        let r = parse("Label: hateful").unwrap_err();
        assert!(!r.has_think_block);
        assert!(!r.has_explanation);
        assert!(r.has_label_field && r.label_parseable);
        assert!(!r.compliant);
    }

    #[test]
    fn nested_think_is_flagged() {
        let r = check_format("<think><think>x</think></think>\nLabel: hateful\nExplanation: y");
        assert!(!r.think_well_nested);
        assert!(!r.compliant);
    }

    #[test]
    fn unknown_label_is_flagged() {
        let r = check_format("<think>a</think>\nLabel: maybe\nExplanation: y");
        assert!(r.has_label_field);
        assert!(!r.label_parseable);
        assert!(!r.compliant);
    }

    #[test]
    fn label_is_case_insensitive() {
        let a = parse("<think>t</think>\nlabel:   HATEFUL\nEXPLANATION: e").unwrap();
        let b = parse("<think>t</think>\nLabel: hateful\nExplanation: e").unwrap();
        assert_eq!(a.label, b.label);
        assert_eq!(a.explanation, b.explanation);
    }

    #[test]
    fn labels_inside_think_are_ignored() {
        let r = scan("<think>Label: hateful</think>\nExplanation: y");
        assert!(!r.report.has_label_field);
        assert_eq!(r.label, None);
        let o = parse("<think>Label: hateful</think>\nLabel: not_hateful\nExplanation: y").unwrap();
        assert_eq!(o.label, Label::NonHateful);
    }

    #[test]
    fn delimiters_in_explanation_are_non_compliant() {
        let r = check_format("<think>a</think>\nLabel: hateful\nExplanation: y <think> z");
        assert!(!r.compliant);
        let r = check_format("<think>a</think>\nLabel: hateful\nExplanation: y Label: z");
        assert!(!r.has_explanation);
    }

    #[test]
    fn mid_line_label_marker_is_not_a_field() {
        let r = check_format("<think>a</think>\nsee Label: hateful\nExplanation: y");
        assert!(!r.has_label_field);
    }
}
