//! Rule-driven transcription normalization.
//!
//! A [`NormRuleSet`] is applied in a fixed order: codepoint mappings, then
//! bullet deletion, then whitespace collapsing, then edge trimming. Rule sets
//! are closed (no replacement codepoint is itself a mapped key), which makes
//! normalization idempotent.
//!
//! Rule files are plain text:
//!
//! ```text
//! # comment
//! @rule pipe_to_danda
//! U+007C -> U+0964
//! U+0304 -> DELETE
//! U+2022 -> BULLET
//! @collapse_whitespace on
//! @strip_edges on
//! ```
//!
//! `@rule NAME` labels the mappings that follow it; mappings before any
//! `@rule` directive are labelled by their source codepoint.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::pipeline::Manifest;
use crate::{Error, Result};

/// Label under which bullet deletions are counted.
pub const BULLET_RULE: &str = "bullet_symbols";
/// Label under which whitespace collapsing and trimming are counted.
pub const WHITESPACE_RULE: &str = "extra_space";

pub const ZERO_WIDTH: [char; 3] = ['\u{200B}', '\u{200C}', '\u{200D}'];
pub const COMBINING_MACRON: char = '\u{0304}';

const DEFAULT_RULES: &str = "\
# Default Devanagari transcription rules.
@rule pipe_to_danda
U+007C -> U+0964
@rule ascii_digits
U+0030 -> U+0966
U+0031 -> U+0967
U+0032 -> U+0968
U+0033 -> U+0969
U+0034 -> U+096A
U+0035 -> U+096B
U+0036 -> U+096C
U+0037 -> U+096D
U+0038 -> U+096E
U+0039 -> U+096F
@rule chandrabindu
U+0310 -> U+0901
@rule combining_macron
U+0304 -> DELETE
# Bullet codepoints are corpus specific; override with a custom rule file.
U+2022 -> BULLET
U+2219 -> BULLET
U+25CF -> BULLET
U+25E6 -> BULLET
U+2027 -> BULLET
@collapse_whitespace on
@strip_edges on
";

#[derive(Debug, Clone, PartialEq, Eq)]
struct Mapping {
    rule: usize,
    replacement: Vec<char>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormRuleSet {
    labels: Vec<String>,
    map: BTreeMap<char, Mapping>,
    bullets: BTreeSet<char>,
    pub collapse_whitespace: bool,
    pub strip_edges: bool,
}

impl Default for NormRuleSet {
    fn default() -> Self {
        NormRuleSet::parse(DEFAULT_RULES).expect("built-in rules parse")
    }
}

impl NormRuleSet {
    /// A rule set with no mappings and both whitespace flags off.
    pub fn empty() -> Self {
        NormRuleSet {
            labels: Vec::new(),
            map: BTreeMap::new(),
            bullets: BTreeSet::new(),
            collapse_whitespace: false,
            strip_edges: false,
        }
    }

    pub fn default_rule_file() -> &'static str {
        DEFAULT_RULES
    }

    /// Adds `from -> replacement` under `label`. An empty replacement deletes.
    pub fn add_mapping(&mut self, label: &str, from: char, replacement: &[char]) -> Result<()> {
        if self.map.contains_key(&from) {
            return Err(Error::InvalidRules(format!("duplicate key {}", fmt_cp(from))));
        }
        if self.bullets.contains(&from) {
            return Err(Error::InvalidRules(format!(
                "{} is both a bullet and a mapping key",
                fmt_cp(from)
            )));
        }
        if let Some(c) = replacement.iter().find(|c| self.map.contains_key(c) || **c == from) {
            return Err(Error::InvalidRules(format!(
                "replacement {} of {} is itself a mapping key",
                fmt_cp(*c),
                fmt_cp(from)
            )));
        }
        if let Some((k, _)) = self.map.iter().find(|(_, m)| m.replacement.contains(&from)) {
            return Err(Error::InvalidRules(format!(
                "key {} appears in the replacement of {}",
                fmt_cp(from),
                fmt_cp(*k)
            )));
        }
        let rule = self.label_index(label);
        self.map.insert(
            from,
            Mapping {
                rule,
                replacement: replacement.to_vec(),
            },
        );
        Ok(())
    }

    pub fn add_bullet(&mut self, c: char) -> Result<()> {
        if self.map.contains_key(&c) {
            return Err(Error::InvalidRules(format!(
                "{} is both a bullet and a mapping key",
                fmt_cp(c)
            )));
        }
        self.bullets.insert(c);
        Ok(())
    }

    fn label_index(&mut self, label: &str) -> usize {
        match self.labels.iter().position(|l| l == label) {
            Some(i) => i,
            None => {
                self.labels.push(label.to_string());
                self.labels.len() - 1
            }
        }
    }

    pub fn bullets(&self) -> impl Iterator<Item = char> + '_ {
        self.bullets.iter().copied()
    }

    pub fn mapped_keys(&self) -> impl Iterator<Item = char> + '_ {
        self.map.keys().copied()
    }

    /// Every label this rule set can report, in report order.
    pub fn rule_labels(&self) -> Vec<String> {
        let mut labels = self.labels.clone();
        labels.push(BULLET_RULE.to_string());
        labels.push(WHITESPACE_RULE.to_string());
        labels
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = NormRuleSet::empty();
        let mut label: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |message: String| Error::RuleSyntax {
                line: line_no,
                message,
            };
            if let Some(directive) = line.strip_prefix('@') {
                let mut parts = directive.split_whitespace();
                let name = parts.next().unwrap_or("");
                let arg = parts.next();
                match (name, arg) {
                    ("rule", Some(l)) => label = Some(l.to_string()),
                    ("collapse_whitespace", Some(v)) => {
                        rules.collapse_whitespace = parse_flag(v).map_err(syntax)?
                    }
                    ("strip_edges", Some(v)) => rules.strip_edges = parse_flag(v).map_err(syntax)?,
                    _ => return Err(syntax(format!("unknown directive @{directive}"))),
                }
                continue;
            }
            let (lhs, rhs) = line
                .split_once("->")
                .ok_or_else(|| syntax("expected `U+XXXX -> ...`".into()))?;
            let from = parse_codepoint(lhs.trim()).map_err(syntax)?;
            let rhs = rhs.trim();
            let wrap = |e: Error| match e {
                Error::InvalidRules(message) => Error::RuleSyntax {
                    line: line_no,
                    message,
                },
                other => other,
            };
            match rhs {
                "BULLET" => rules.add_bullet(from).map_err(wrap)?,
                "DELETE" => {
                    let l = label.clone().unwrap_or_else(|| fmt_cp(from));
                    rules.add_mapping(&l, from, &[]).map_err(wrap)?
                }
                _ => {
                    let replacement = rhs
                        .split(',')
                        .map(|s| parse_codepoint(s.trim()))
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(syntax)?;
                    let l = label.clone().unwrap_or_else(|| fmt_cp(from));
                    rules.add_mapping(&l, from, &replacement).map_err(wrap)?
                }
            }
        }
        Ok(rules)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        NormRuleSet::parse(&text)
    }

    /// Serializes back to the rule file format.
    pub fn to_rule_file(&self) -> String {
        let mut out = String::new();
        for (i, label) in self.labels.iter().enumerate() {
            let _ = writeln!(out, "@rule {label}");
            for (from, m) in self.map.iter().filter(|(_, m)| m.rule == i) {
                if m.replacement.is_empty() {
                    let _ = writeln!(out, "{} -> DELETE", fmt_cp(*from));
                } else {
                    let rhs: Vec<String> = m.replacement.iter().map(|c| fmt_cp(*c)).collect();
                    let _ = writeln!(out, "{} -> {}", fmt_cp(*from), rhs.join(","));
                }
            }
        }
        for b in &self.bullets {
            let _ = writeln!(out, "{} -> BULLET", fmt_cp(*b));
        }
        let onoff = |b: bool| if b { "on" } else { "off" };
        let _ = writeln!(out, "@collapse_whitespace {}", onoff(self.collapse_whitespace));
        let _ = writeln!(out, "@strip_edges {}", onoff(self.strip_edges));
        out
    }
}

fn parse_flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        other => Err(format!("expected on/off, got {other:?}")),
    }
}

fn parse_codepoint(s: &str) -> std::result::Result<char, String> {
    let hex = s
        .strip_prefix("U+")
        .or_else(|| s.strip_prefix("u+"))
        .ok_or_else(|| format!("expected U+XXXX, got {s:?}"))?;
    let v = u32::from_str_radix(hex, 16).map_err(|_| format!("bad hex codepoint {s:?}"))?;
    char::from_u32(v).ok_or_else(|| format!("{s} is not a Unicode scalar value"))
}

fn fmt_cp(c: char) -> String {
    format!("U+{:04X}", c as u32)
}

/// Edit counts keyed by rule label.
pub type NormCounts = BTreeMap<String, usize>;

/// Applies `rules` to one line, returning the cleaned text and per-rule edit counts.
pub fn normalize_line(text: &str, rules: &NormRuleSet) -> (String, NormCounts) {
    let mut counts = NormCounts::new();
    let mut bump = |label: &str, n: usize| {
        if n > 0 {
            *counts.entry(label.to_string()).or_insert(0) += n;
        }
    };

    let mut mapped: Vec<char> = Vec::with_capacity(text.len());
    for c in text.chars() {
        match rules.map.get(&c) {
            Some(m) => {
                bump(&rules.labels[m.rule], 1);
                mapped.extend_from_slice(&m.replacement);
            }
            None => mapped.push(c),
        }
    }

    let before = mapped.len();
    mapped.retain(|c| !rules.bullets.contains(c));
    bump(BULLET_RULE, before - mapped.len());

    let mut ws_edits = 0;
    if rules.collapse_whitespace {
        let mut out = Vec::with_capacity(mapped.len());
        let mut in_run = false;
        for c in mapped {
            if c.is_whitespace() {
                if in_run {
                    ws_edits += 1;
                } else {
                    if c != ' ' {
                        ws_edits += 1;
                    }
                    out.push(' ');
                    in_run = true;
                }
            } else {
                out.push(c);
                in_run = false;
            }
        }
        mapped = out;
    }
    if rules.strip_edges {
        let start = mapped.iter().position(|c| !c.is_whitespace());
        match start {
            None => {
                ws_edits += mapped.len();
                mapped.clear();
            }
            Some(start) => {
                let end = mapped.iter().rposition(|c| !c.is_whitespace()).unwrap() + 1;
                ws_edits += start + (mapped.len() - end);
                mapped.truncate(end);
                mapped.drain(..start);
            }
        }
    }
    bump(WHITESPACE_RULE, ws_edits);

    (mapped.into_iter().collect(), counts)
}

/// Removes U+200B, U+200C and U+200D.
pub fn strip_zero_width(text: &str) -> String {
    text.chars().filter(|c| !ZERO_WIDTH.contains(c)).collect()
}

/// Removes combining macrons (U+0304).
pub fn remove_combining_macrons(text: &str) -> String {
    remove_marks(text, &[])
}

/// Removes U+0304 and any of `extra` (further upper-dash marks).
pub fn remove_marks(text: &str, extra: &[char]) -> String {
    text.chars()
        .filter(|c| *c != COMBINING_MACRON && !extra.contains(c))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormReport {
    /// Characters modified or removed, per rule.
    pub counts: BTreeMap<String, usize>,
    /// Lines in which the rule made at least one edit.
    pub lines_affected: BTreeMap<String, usize>,
    pub total_lines: usize,
}

impl NormReport {
    pub fn new(rules: &NormRuleSet) -> Self {
        let zeros: BTreeMap<String, usize> =
            rules.rule_labels().into_iter().map(|l| (l, 0)).collect();
        NormReport {
            counts: zeros.clone(),
            lines_affected: zeros,
            total_lines: 0,
        }
    }

    pub fn add_line(&mut self, counts: &NormCounts) {
        self.total_lines += 1;
        for (label, n) in counts {
            *self.counts.entry(label.clone()).or_insert(0) += n;
            if *n > 0 {
                *self.lines_affected.entry(label.clone()).or_insert(0) += 1;
            }
        }
    }

    /// Tab-separated table: rule, count, lines affected, percent of lines.
    pub fn to_table(&self) -> String {
        let mut out = String::from("rule\tcount\tlines_affected\tpercent_lines\n");
        for (label, count) in &self.counts {
            let lines = self.lines_affected.get(label).copied().unwrap_or(0);
            let pct = if self.total_lines == 0 {
                0.0
            } else {
                100.0 * lines as f64 / self.total_lines as f64
            };
            let _ = writeln!(out, "{label}\t{count}\t{lines}\t{pct:.2}");
        }
        out
    }
}

/// Normalizes every transcription in the manifest.
pub fn normalize_manifest(manifest: &Manifest, rules: &NormRuleSet) -> (Manifest, NormReport) {
    let mut report = NormReport::new(rules);
    let records = manifest
        .records
        .iter()
        .map(|r| {
            let (text, counts) = normalize_line(&r.text, rules);
            report.add_line(&counts);
            let mut r = r.clone();
            r.text = text;
            r
        })
        .collect();
    (Manifest::new(records), report)
}

/// Normalizes plain lines, dropping those that end up empty.
pub fn normalize_lines<'a>(
    lines: impl IntoIterator<Item = &'a str>,
    rules: &NormRuleSet,
) -> Vec<String> {
    lines
        .into_iter()
        .map(|l| normalize_line(l, rules).0)
        .filter(|l| !l.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Record;

    fn norm(s: &str) -> String {
        normalize_line(s, &NormRuleSet::default()).0
    }

    #[test]
    fn pipe_becomes_danda() {
        assert_eq!(norm("क|ख"), "क।ख");
    }

    #[test]
    fn ascii_digits_become_devanagari() {
        assert_eq!(norm("12"), "१२");
        assert_eq!(norm("0123456789"), "०१२३४५६७८९");
    }

    #[test]
    fn chandrabindu_standardized() {
        assert_eq!(norm("म\u{0310}"), "म\u{0901}");
    }

    #[test]
    fn whitespace_collapsed_and_trimmed() {
        let (out, counts) = normalize_line("a  b ", &NormRuleSet::default());
        assert_eq!(out, "a b");
        assert_eq!(counts[WHITESPACE_RULE], 2);
    }

    #[test]
    fn bullets_deleted_and_counted() {
        let (out, counts) = normalize_line("क•ख•", &NormRuleSet::default());
        assert_eq!(out, "कख");
        assert_eq!(counts[BULLET_RULE], 2);
    }

    #[test]
    fn bullet_between_spaces_leaves_single_space() {
        assert_eq!(norm("क • ख"), "क ख");
    }

    #[test]
    fn counts_sum_to_edits() {
        let (out, counts) = normalize_line(" 1|\u{0304}x\t\ty ", &NormRuleSet::default());
        assert_eq!(out, "१।x y");
        // digit, pipe, macron, tab->space, extra tab, two edge spaces
        assert_eq!(counts.values().sum::<usize>(), 7);
        assert_eq!(counts["ascii_digits"], 1);
        assert_eq!(counts["pipe_to_danda"], 1);
        assert_eq!(counts["combining_macron"], 1);
        assert_eq!(counts[WHITESPACE_RULE], 4);
    }

    #[test]
    fn all_whitespace_line_becomes_empty() {
        assert_eq!(norm("   "), "");
    }

    #[test]
    fn zero_width_stripping() {
        assert_eq!(strip_zero_width("क\u{200D}ष"), "कष");
        assert_eq!(strip_zero_width("abc"), "abc");
        assert_eq!(strip_zero_width("\u{200B}\u{200C}"), "");
    }

    #[test]
    fn macron_removal() {
        assert_eq!(remove_combining_macrons("क\u{0304}"), "क");
        assert_eq!(remove_combining_macrons("क"), "क");
        assert_eq!(remove_combining_macrons("क\u{0304}ख\u{0304}"), "कख");
        assert_eq!(remove_marks("क\u{0305}", &['\u{0305}']), "क");
    }

    #[test]
    fn rule_file_rejects_open_rule_sets() {
        let err = NormRuleSet::parse("U+0041 -> U+0042\nU+0042 -> U+0043\n").unwrap_err();
        assert!(matches!(err, Error::RuleSyntax { line: 2, .. }), "{err}");
        let err = NormRuleSet::parse("U+0041 -> U+0042\nU+0041 -> U+0043\n").unwrap_err();
        assert!(matches!(err, Error::RuleSyntax { line: 2, .. }));
        let err = NormRuleSet::parse("U+0041 -> U+0041\n").unwrap_err();
        assert!(matches!(err, Error::RuleSyntax { line: 1, .. }));
    }

    #[test]
    fn rule_file_syntax_errors() {
        assert!(NormRuleSet::parse("U+zz -> DELETE").is_err());
        assert!(NormRuleSet::parse("0041 -> DELETE").is_err());
        assert!(NormRuleSet::parse("@frobnicate on").is_err());
        assert!(NormRuleSet::parse("U+0041 U+0042").is_err());
        assert!(NormRuleSet::parse("U+D800 -> DELETE").is_err());
    }

    #[test]
    fn rule_file_round_trip() {
        let rules = NormRuleSet::default();
        let again = NormRuleSet::parse(&rules.to_rule_file()).unwrap();
        assert_eq!(rules, again);
    }

    #[test]
    fn multi_codepoint_replacement() {
        let rules = NormRuleSet::parse("U+0958 -> U+0915,U+093C\n").unwrap();
        assert_eq!(normalize_line("\u{0958}", &rules).0, "\u{0915}\u{093C}");
    }

    #[test]
    fn manifest_report_counts_lines() {
        let m = Manifest::new(vec![
            Record::new("1", "1.png", "क|ख"),
            Record::new("2", "2.png", "ग"),
            Record::new("3", "3.png", "|घ|"),
        ]);
        let (out, report) = normalize_manifest(&m, &NormRuleSet::default());
        assert_eq!(out.records[2].text, "।घ।");
        assert_eq!(report.total_lines, 3);
        assert_eq!(report.lines_affected["pipe_to_danda"], 2);
        assert_eq!(report.counts["pipe_to_danda"], 3);
    }

    #[test]
    fn manifest_with_digit_and_pipe() {
        let m = Manifest::new(vec![Record::new("1", "1.png", "1|")]);
        let (out, report) = normalize_manifest(&m, &NormRuleSet::default());
        assert_eq!(out.records[0].text, "१।");
        assert_eq!(report.counts["ascii_digits"], 1);
        assert_eq!(report.counts["pipe_to_danda"], 1);
    }

    #[test]
    fn empty_manifest_report() {
        let (out, report) = normalize_manifest(&Manifest::default(), &NormRuleSet::default());
        assert!(out.is_empty());
        assert_eq!(report.total_lines, 0);
        assert!(report.counts.values().all(|&n| n == 0));
    }
}
