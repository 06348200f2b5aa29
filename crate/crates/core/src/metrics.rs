//! Edit alignment and character-level evaluation metrics.
//!
//! Strings are compared codepoint by codepoint after removing zero-width
//! characters (configurable via [`EvalOptions`]). Rates are exact rationals
//! ([`Rate`]); convert with [`rate_to_f64`] for display.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::textnorm::strip_zero_width;
use crate::{Error, Result};

/// Exact non-negative rational used for CER values.
pub type Rate = BigRational;

pub fn rate(numer: u64, denom: u64) -> Rate {
    BigRational::new(BigInt::from(numer), BigInt::from(denom))
}

pub fn rate_to_f64(r: &Rate) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Match,
    Sub,
    Del,
    Ins,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditOp<T> {
    pub kind: EditKind,
    pub reference: Option<T>,
    pub hypothesis: Option<T>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: u64,
    pub deletions: u64,
    pub insertions: u64,
    pub correct: u64,
}

impl EditCounts {
    pub fn errors(&self) -> u64 {
        self.substitutions + self.deletions + self.insertions
    }

    /// N = S + D + C, the reference length.
    pub fn reference_len(&self) -> u64 {
        self.substitutions + self.deletions + self.correct
    }

    pub fn hypothesis_len(&self) -> u64 {
        self.substitutions + self.insertions + self.correct
    }

    fn record(&mut self, kind: EditKind) {
        match kind {
            EditKind::Match => self.correct += 1,
            EditKind::Sub => self.substitutions += 1,
            EditKind::Del => self.deletions += 1,
            EditKind::Ins => self.insertions += 1,
        }
    }
}

impl std::ops::AddAssign for EditCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.substitutions += rhs.substitutions;
        self.deletions += rhs.deletions;
        self.insertions += rhs.insertions;
        self.correct += rhs.correct;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment<T = char> {
    pub ops: Vec<EditOp<T>>,
    pub counts: EditCounts,
}

impl<T: Clone> Alignment<T> {
    pub fn distance(&self) -> u64 {
        self.counts.errors()
    }

    /// The reference sequence reconstructed from the edit script.
    pub fn reference(&self) -> Vec<T> {
        self.ops.iter().filter_map(|op| op.reference.clone()).collect()
    }

    /// The hypothesis sequence reconstructed from the edit script.
    pub fn hypothesis(&self) -> Vec<T> {
        self.ops.iter().filter_map(|op| op.hypothesis.clone()).collect()
    }
}

/// Minimal unit-cost Levenshtein alignment with a full backtrace.
///
/// Backtrace tie-breaking prefers MATCH, then SUB, then DEL, then INS, walking
/// from the end of both sequences.
pub fn align_seq<T: PartialEq + Clone>(reference: &[T], hypothesis: &[T]) -> Alignment<T> {
    let n = reference.len();
    let m = hypothesis.len();
    let w = m + 1;
    let mut d = vec![0u32; (n + 1) * w];
    for j in 0..=m {
        d[j] = j as u32;
    }
    for i in 1..=n {
        d[i * w] = i as u32;
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + u32::from(reference[i - 1] != hypothesis[j - 1]);
            let up = d[(i - 1) * w + j] + 1;
            let left = d[i * w + j - 1] + 1;
            d[i * w + j] = diag.min(up).min(left);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let mut counts = EditCounts::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        let kind = if i > 0 && j > 0 && reference[i - 1] == hypothesis[j - 1] && here == d[(i - 1) * w + j - 1] {
            EditKind::Match
        } else if i > 0 && j > 0 && here == d[(i - 1) * w + j - 1] + 1 {
            EditKind::Sub
        } else if i > 0 && here == d[(i - 1) * w + j] + 1 {
            EditKind::Del
        } else {
            EditKind::Ins
        };
        let op = match kind {
            EditKind::Match | EditKind::Sub => {
                i -= 1;
                j -= 1;
                EditOp {
                    kind,
                    reference: Some(reference[i].clone()),
                    hypothesis: Some(hypothesis[j].clone()),
                }
            }
            EditKind::Del => {
                i -= 1;
                EditOp {
                    kind,
                    reference: Some(reference[i].clone()),
                    hypothesis: None,
                }
            }
            EditKind::Ins => {
                j -= 1;
                EditOp {
                    kind,
                    reference: None,
                    hypothesis: Some(hypothesis[j].clone()),
                }
            }
        };
        counts.record(kind);
        ops.push(op);
    }
    ops.reverse();
    Alignment { ops, counts }
}

/// Codepoint alignment after zero-width stripping.
pub fn align(reference: &str, hypothesis: &str) -> Alignment<char> {
    align_with(reference, hypothesis, true)
}

pub fn align_with(reference: &str, hypothesis: &str, strip: bool) -> Alignment<char> {
    let prep = |s: &str| -> Vec<char> {
        if strip {
            strip_zero_width(s).chars().collect()
        } else {
            s.chars().collect()
        }
    };
    align_seq(&prep(reference), &prep(hypothesis))
}

/// Unit-cost edit distance between two codepoint sequences (no stripping).
pub fn edit_distance(a: &str, b: &str) -> u64 {
    align_with(a, b, false).distance()
}

fn cer_from_counts(counts: &EditCounts) -> Result<Rate> {
    match counts.reference_len() {
        0 => Err(Error::EmptyReference),
        n => Ok(rate(counts.errors(), n)),
    }
}

/// (S + D + I) / N after zero-width stripping.
pub fn cer(reference: &str, hypothesis: &str) -> Result<Rate> {
    cer_from_counts(&align(reference, hypothesis).counts)
}

/// Σ lᵢ·CERᵢ / Σ lᵢ.
pub fn weighted_cer(lines: &[(u64, Rate)]) -> Result<Rate> {
    let total: u64 = lines.iter().map(|(l, _)| *l).sum();
    if total == 0 {
        return Err(Error::ZeroTotalLength);
    }
    let weighted = lines
        .iter()
        .fold(Rate::zero(), |acc, (l, c)| acc + c * BigInt::from(*l));
    Ok(weighted / BigInt::from(total))
}

/// Unweighted mean of per-line CERs.
pub fn mean_cer(cers: &[Rate]) -> Result<Rate> {
    if cers.is_empty() {
        return Err(Error::EmptyInput("CER list"));
    }
    let sum = cers.iter().fold(Rate::zero(), |acc, c| acc + c);
    Ok(sum / BigInt::from(cers.len()))
}

/// Fraction of pairs whose strings are equal after zero-width stripping.
pub fn exact_match_accuracy<R: AsRef<str>, H: AsRef<str>>(pairs: &[(R, H)]) -> Result<Rate> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("prediction set"));
    }
    let hits = pairs
        .iter()
        .filter(|(r, h)| strip_zero_width(r.as_ref()) == strip_zero_width(h.as_ref()))
        .count();
    Ok(rate(hits as u64, pairs.len() as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptyReferencePolicy {
    /// Leave the line out of CER aggregates (it still counts for accuracy).
    #[default]
    Skip,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub strip_zero_width: bool,
    pub empty_reference: EmptyReferencePolicy,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            strip_zero_width: true,
            empty_reference: EmptyReferencePolicy::Skip,
        }
    }
}

/// One prediction record as stored in predictions JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::json(format!("{}:{}", path.display(), n + 1), e))?,
        );
    }
    Ok(out)
}

pub fn predictions_to_jsonl(preds: &[Prediction]) -> String {
    preds
        .iter()
        .map(|p| serde_json::to_string(p).expect("prediction serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineScore {
    pub id: String,
    /// lᵢ: reference length in codepoints.
    pub length: u64,
    pub cer: Rate,
    pub counts: EditCounts,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub lines: Vec<LineScore>,
    /// Ids of lines left out of CER aggregates because their reference was empty.
    pub skipped: Vec<String>,
    pub mean_cer: Rate,
    pub weighted_cer: Rate,
    pub accuracy: Rate,
    pub totals: EditCounts,
}

pub fn evaluate(predictions: &[Prediction], options: &EvalOptions) -> Result<EvalSummary> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("prediction set"));
    }
    let mut lines = Vec::with_capacity(predictions.len());
    let mut skipped = Vec::new();
    let mut totals = EditCounts::default();
    let mut exact_hits = 0u64;
    for p in predictions {
        let a = align_with(&p.reference, &p.hypothesis, options.strip_zero_width);
        let exact = a.counts.errors() == 0;
        if exact {
            exact_hits += 1;
        }
        match cer_from_counts(&a.counts) {
            Ok(c) => {
                totals += a.counts;
                lines.push(LineScore {
                    id: p.id.clone(),
                    length: a.counts.reference_len(),
                    cer: c,
                    counts: a.counts,
                    exact,
                });
            }
            Err(e) => match options.empty_reference {
                EmptyReferencePolicy::Fail => return Err(e),
                EmptyReferencePolicy::Skip => skipped.push(p.id.clone()),
            },
        }
    }
    let cers: Vec<Rate> = lines.iter().map(|l| l.cer.clone()).collect();
    let weighted_input: Vec<(u64, Rate)> =
        lines.iter().map(|l| (l.length, l.cer.clone())).collect();
    Ok(EvalSummary {
        mean_cer: mean_cer(&cers)?,
        weighted_cer: weighted_cer(&weighted_input)?,
        accuracy: rate(exact_hits, predictions.len() as u64),
        lines,
        skipped,
        totals,
    })
}

/// Exact rate rendered as `numer/denom` alongside its float value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateJson {
    pub value: f64,
    pub exact: String,
}

impl From<&Rate> for RateJson {
    fn from(r: &Rate) -> Self {
        RateJson {
            value: rate_to_f64(r),
            exact: format!("{}/{}", r.numer(), r.denom()),
        }
    }
}

#[derive(Serialize)]
struct SummaryJson {
    lines: usize,
    skipped: Vec<String>,
    mean_cer: RateJson,
    weighted_cer: RateJson,
    exact_match_accuracy: RateJson,
    totals: EditCounts,
}

impl EvalSummary {
    pub fn to_json(&self) -> String {
        let j = SummaryJson {
            lines: self.lines.len(),
            skipped: self.skipped.clone(),
            mean_cer: (&self.mean_cer).into(),
            weighted_cer: (&self.weighted_cer).into(),
            exact_match_accuracy: (&self.accuracy).into(),
            totals: self.totals,
        };
        serde_json::to_string_pretty(&j).expect("summary serializes") + "\n"
    }

    /// Per-line CSV: id, length, S, D, I, C, cer, exact.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,length,substitutions,deletions,insertions,correct,cer,exact\n");
        for l in &self.lines {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                csv_field(&l.id),
                l.length,
                l.counts.substitutions,
                l.counts.deletions,
                l.counts.insertions,
                l.counts.correct,
                rate_to_f64(&l.cer),
                l.exact
            );
        }
        out
    }

    pub fn per_line(&self) -> Vec<(u64, Rate)> {
        self.lines.iter().map(|l| (l.length, l.cer.clone())).collect()
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(r: &str, h: &str) -> (u64, u64, u64, u64) {
        let c = align(r, h).counts;
        (c.substitutions, c.deletions, c.insertions, c.correct)
    }

    #[test]
    fn identity_alignment() {
        assert_eq!(counts("abc", "abc"), (0, 0, 0, 3));
    }

    #[test]
    fn single_substitution() {
        assert_eq!(counts("abcd", "abxd"), (1, 0, 0, 3));
        let a = align("abcd", "abxd");
        assert_eq!(a.ops[2].kind, EditKind::Sub);
        assert_eq!(a.ops[2].reference, Some('c'));
        assert_eq!(a.ops[2].hypothesis, Some('x'));
    }

    #[test]
    fn full_deletion() {
        assert_eq!(counts("ab", ""), (0, 2, 0, 0));
        assert_eq!(counts("", "ab"), (0, 0, 2, 0));
    }

    #[test]
    fn ops_replay_both_sides() {
        let a = align("kitten", "sitting");
        assert_eq!(a.distance(), 3);
        assert_eq!(a.reference().iter().collect::<String>(), "kitten");
        assert_eq!(a.hypothesis().iter().collect::<String>(), "sitting");
    }

    #[test]
    fn tie_break_prefers_substitution_over_indels() {
        let a = align("ab", "ba");
        let kinds: Vec<_> = a.ops.iter().map(|o| o.kind).collect();
        assert_eq!(kinds, vec![EditKind::Sub, EditKind::Sub]);
    }

    #[test]
    fn zero_width_ignored_in_alignment() {
        assert_eq!(align("क\u{200D}ष", "कष").distance(), 0);
        assert_eq!(align_with("क\u{200D}ष", "कष", false).distance(), 1);
    }

    #[test]
    fn cer_examples() {
        assert_eq!(cer("abcd", "abxd").unwrap(), rate(1, 4));
        assert_eq!(cer("x", "x").unwrap(), rate(0, 1));
        assert_eq!(cer("a", "abc").unwrap(), rate(2, 1));
        assert!(matches!(cer("", "a"), Err(Error::EmptyReference)));
        assert!(matches!(cer("\u{200B}", "a"), Err(Error::EmptyReference)));
    }

    #[test]
    fn weighted_cer_examples() {
        assert_eq!(
            weighted_cer(&[(10, rate(1, 10)), (30, rate(0, 1))]).unwrap(),
            rate(1, 40)
        );
        assert_eq!(weighted_cer(&[(5, rate(0, 1))]).unwrap(), rate(0, 1));
        assert_eq!(
            weighted_cer(&[(1, rate(1, 1)), (1, rate(1, 1))]).unwrap(),
            rate(1, 1)
        );
        assert!(matches!(weighted_cer(&[]), Err(Error::ZeroTotalLength)));
        assert!(matches!(
            weighted_cer(&[(0, rate(1, 2))]),
            Err(Error::ZeroTotalLength)
        ));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(
            exact_match_accuracy(&[("a", "a"), ("b", "c")]).unwrap(),
            rate(1, 2)
        );
        assert!(exact_match_accuracy::<&str, &str>(&[]).is_err());
        assert_eq!(
            exact_match_accuracy(&[("क\u{200B}ख", "कख")]).unwrap(),
            rate(1, 1)
        );
    }

    fn pred(id: &str, r: &str, h: &str) -> Prediction {
        Prediction {
            id: id.into(),
            reference: r.into(),
            hypothesis: h.into(),
        }
    }

    #[test]
    fn evaluate_aggregates() {
        let preds = vec![pred("1", "abcd", "abxd"), pred("2", "x", "x")];
        let s = evaluate(&preds, &EvalOptions::default()).unwrap();
        assert_eq!(s.mean_cer, rate(1, 8));
        assert_eq!(s.weighted_cer, rate(1, 5));
        assert_eq!(s.accuracy, rate(1, 2));
        assert_eq!(s.totals.substitutions, 1);
    }

    #[test]
    fn evaluate_empty_reference_policy() {
        let preds = vec![pred("1", "", "a"), pred("2", "ab", "ab")];
        let s = evaluate(&preds, &EvalOptions::default()).unwrap();
        assert_eq!(s.skipped, vec!["1".to_string()]);
        assert_eq!(s.lines.len(), 1);
        let fail = EvalOptions {
            empty_reference: EmptyReferencePolicy::Fail,
            ..EvalOptions::default()
        };
        assert!(matches!(evaluate(&preds, &fail), Err(Error::EmptyReference)));
    }

    #[test]
    fn summary_json_has_exact_rates() {
        let s = evaluate(&[pred("1", "abcd", "abxd")], &EvalOptions::default()).unwrap();
        let j = s.to_json();
        assert!(j.contains("\"exact\": \"1/4\""), "{j}");
        assert!(s.to_csv().lines().nth(1).unwrap().starts_with("1,4,1,0,0,3,0.25"));
    }

    #[test]
    fn csv_field_quoting() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("q\"x"), "\"q\"\"x\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
