//! Error analysis: character confusion matrices, error-share rankings, CER
//! histograms, length-binned weighted CER and token-level uncertainty flags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::decode::{DecodeResult, StepRecord};
use crate::imaging::GrayImage;
use crate::metrics::{align, csv_field, rate, rate_to_f64, weighted_cer, Alignment, EditKind, Rate};
use crate::tokenizer::{TokenId, Vocabulary, BOS, EOS, PAD};
use crate::{Error, Result};

/// Uncertainty threshold on `p₂ / p₁` reported as best in the reference study.
pub const DEFAULT_THRESHOLD: f64 = 0.034;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    /// `(reference, hypothesis)` substitution counts.
    pub substitutions: BTreeMap<(char, char), u64>,
    /// Deleted reference characters.
    pub deletions: BTreeMap<char, u64>,
    /// Inserted hypothesis characters.
    pub insertions: BTreeMap<char, u64>,
}

impl ConfusionMatrix {
    pub fn add(&mut self, a: &Alignment<char>) {
        for op in &a.ops {
            match (op.kind, op.reference, op.hypothesis) {
                (EditKind::Sub, Some(r), Some(h)) => *self.substitutions.entry((r, h)).or_default() += 1,
                (EditKind::Del, Some(r), _) => *self.deletions.entry(r).or_default() += 1,
                (EditKind::Ins, _, Some(h)) => *self.insertions.entry(h).or_default() += 1,
                _ => {}
            }
        }
    }

    pub fn total_substitutions(&self) -> u64 {
        self.substitutions.values().sum()
    }

    pub fn total_deletions(&self) -> u64 {
        self.deletions.values().sum()
    }

    pub fn total_insertions(&self) -> u64 {
        self.insertions.values().sum()
    }

    pub fn total_errors(&self) -> u64 {
        self.total_substitutions() + self.total_deletions() + self.total_insertions()
    }

    pub fn is_empty(&self) -> bool {
        self.substitutions.is_empty() && self.deletions.is_empty() && self.insertions.is_empty()
    }

    /// Rows `reference,hypothesis,kind,count`; empty cells for the missing side.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("reference,hypothesis,kind,count\n");
        for ((r, h), n) in &self.substitutions {
            let _ = writeln!(out, "{},{},sub,{n}", csv_field(&r.to_string()), csv_field(&h.to_string()));
        }
        for (r, n) in &self.deletions {
            let _ = writeln!(out, "{},,del,{n}", csv_field(&r.to_string()));
        }
        for (h, n) in &self.insertions {
            let _ = writeln!(out, ",{},ins,{n}", csv_field(&h.to_string()));
        }
        out
    }
}

pub fn build_confusion<'a>(alignments: impl IntoIterator<Item = &'a Alignment<char>>) -> ConfusionMatrix {
    let mut m = ConfusionMatrix::default();
    for a in alignments {
        m.add(a);
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorShare {
    pub ch: char,
    pub count: u64,
    pub share: f64,
}

/// Errors per character, largest first (ties by codepoint). Substitutions and
/// deletions count against the reference character, insertions against the
/// inserted one. `top_n = None` keeps every character.
pub fn error_share(m: &ConfusionMatrix, top_n: Option<usize>) -> Vec<ErrorShare> {
    let mut per: BTreeMap<char, u64> = BTreeMap::new();
    for ((r, _), n) in &m.substitutions {
        *per.entry(*r).or_default() += n;
    }
    for (r, n) in &m.deletions {
        *per.entry(*r).or_default() += n;
    }
    for (h, n) in &m.insertions {
        *per.entry(*h).or_default() += n;
    }
    let total: u64 = per.values().sum();
    let mut rows: Vec<ErrorShare> = per
        .into_iter()
        .map(|(ch, count)| ErrorShare {
            ch,
            count,
            share: count as f64 / total as f64,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.ch.cmp(&b.ch)));
    if let Some(n) = top_n {
        rows.truncate(n);
    }
    rows
}

pub fn error_share_csv(rows: &[ErrorShare]) -> String {
    let mut out = String::from("rank,char,codepoint,count,share\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},U+{:04X},{},{}",
            i + 1,
            csv_field(&r.ch.to_string()),
            r.ch as u32,
            r.count,
            r.share
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    /// Inclusive lower edge.
    pub lo: Rate,
    /// Exclusive upper edge.
    pub hi: Rate,
    pub count: usize,
}

/// Histogram of per-line CERs over half-open bins `[i·w, (i+1)·w)` from 0 to
/// the bin holding the largest value.
pub fn cer_histogram(cers: &[Rate], bin_width: &Rate) -> Result<Vec<HistogramBin>> {
    if *bin_width <= Rate::zero() {
        return Err(Error::InvalidArgument("histogram bin width must be positive".into()));
    }
    if cers.iter().any(|c| *c < Rate::zero()) {
        return Err(Error::InvalidArgument("negative CER".into()));
    }
    let index = |c: &Rate| (c / bin_width).floor().to_integer().to_usize().expect("non-negative");
    let bins = cers.iter().map(index).max().map_or(1, |m| m + 1);
    let mut counts = vec![0usize; bins];
    for c in cers {
        counts[index(c)] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo: bin_width * Rate::from_integer((i as u64).into()),
            hi: bin_width * Rate::from_integer((i as u64 + 1).into()),
            count,
        })
        .collect())
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("lo,hi,count\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{}", rate_to_f64(&b.lo), rate_to_f64(&b.hi), b.count);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthBin {
    pub lo: u64,
    /// Exclusive; `None` for the open last bin.
    pub hi: Option<u64>,
    pub lines: usize,
    /// Length-weighted CER of the bin; `None` when the bin is empty.
    pub weighted_cer: Option<Rate>,
}

/// Length-weighted CER per length bin `[edges[i], edges[i+1])`, the last bin
/// open-ended. Empty `edges` means a single bin from 0. Lines shorter than
/// `edges[0]` fall in no bin.
pub fn cer_vs_length(lines: &[(u64, Rate)], edges: &[u64]) -> Result<Vec<LengthBin>> {
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("length bin edges must increase strictly".into()));
    }
    let edges: Vec<u64> = if edges.is_empty() { vec![0] } else { edges.to_vec() };
    edges
        .iter()
        .enumerate()
        .map(|(i, &lo)| {
            let hi = edges.get(i + 1).copied();
            let members: Vec<(u64, Rate)> = lines
                .iter()
                .filter(|(l, _)| *l >= lo && hi.is_none_or(|h| *l < h))
                .cloned()
                .collect();
            let weighted = if members.is_empty() {
                None
            } else if members.iter().all(|(l, _)| *l == 0) {
                None
            } else {
                Some(weighted_cer(&members)?)
            };
            Ok(LengthBin {
                lo,
                hi,
                lines: members.len(),
                weighted_cer: weighted,
            })
        })
        .collect()
}

pub fn length_bins_csv(bins: &[LengthBin]) -> String {
    let mut out = String::from("lo,hi,lines,weighted_cer\n");
    for b in bins {
        let hi = b.hi.map(|h| h.to_string()).unwrap_or_default();
        let w = b.weighted_cer.as_ref().map(|r| rate_to_f64(r).to_string()).unwrap_or_else(|| "absent".into());
        let _ = writeln!(out, "{},{hi},{},{w}", b.lo, b.lines);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintyRecord {
    pub line: String,
    /// Index of the token among the line's decoded tokens.
    pub position: usize,
    pub chosen: TokenId,
    pub top3: Vec<(TokenId, f64)>,
    pub relative_prob: f64,
    pub flagged: bool,
    pub is_error: bool,
    /// The reference token at this position when it is a single vocabulary entry.
    pub correct_token: Option<TokenId>,
    /// The correct token is among the three leading candidates.
    pub recoverable: bool,
}

/// Relative probability `p₂ / p₁` of sorted candidate records.
pub fn relative_prob(top: &[(TokenId, f64)]) -> f64 {
    StepRecord {
        chosen: 0,
        top: top.to_vec(),
    }
    .relative_prob()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlagStats {
    pub threshold: f64,
    pub flagged: usize,
    pub errors: usize,
    pub true_positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// False when nothing was flagged and precision is reported as 0.
    pub precision_defined: bool,
    pub recall_defined: bool,
}

/// Precision/recall/F1 of `ratio ≥ threshold` as an error detector.
pub fn flag_stats(records: &[UncertaintyRecord], threshold: f64) -> FlagStats {
    let flagged = records.iter().filter(|r| r.relative_prob >= threshold).count();
    let errors = records.iter().filter(|r| r.is_error).count();
    let tp = records.iter().filter(|r| r.is_error && r.relative_prob >= threshold).count();
    let precision = if flagged > 0 { tp as f64 / flagged as f64 } else { 0.0 };
    let recall = if errors > 0 { tp as f64 / errors as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    FlagStats {
        threshold,
        flagged,
        errors,
        true_positives: tp,
        precision,
        recall,
        f1,
        precision_defined: flagged > 0,
        recall_defined: errors > 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintyReport {
    pub records: Vec<UncertaintyRecord>,
    pub stats: FlagStats,
    /// Error tokens whose correct token is among the top three.
    pub recoverable_errors: usize,
    /// Flagged error tokens whose correct token is among the top three.
    pub recoverable_flagged: usize,
}

struct HypChar {
    byte: usize,
}

fn hyp_chars(bytes: &[u8]) -> (String, Vec<HypChar>) {
    let mut text = String::new();
    let mut chars = Vec::new();
    let mut offset = 0;
    for chunk in bytes.utf8_chunks() {
        for (i, c) in chunk.valid().char_indices() {
            text.push(c);
            chars.push(HypChar { byte: offset + i });
        }
        offset += chunk.valid().len();
        if !chunk.invalid().is_empty() {
            text.push('\u{FFFD}');
            chars.push(HypChar { byte: offset });
            offset += chunk.invalid().len();
        }
    }
    (text, chars)
}

/// Labels each decoded content token as correct or erroneous by projecting the
/// character alignment of hypothesis and reference onto token byte spans, and
/// computes its uncertainty flag.
///
/// A token is erroneous when any character it covers is substituted or
/// inserted, or a reference character is deleted right after it (deletions
/// before the first character go to the first token).
pub fn label_tokens<V: Vocabulary>(
    line: &str,
    reference: &str,
    result: &DecodeResult,
    vocab: &V,
    threshold: f64,
) -> Vec<UncertaintyRecord> {
    let content: Vec<(usize, TokenId)> = result
        .tokens
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, t)| ![PAD, BOS, EOS].contains(t))
        .collect();
    let mut spans = Vec::with_capacity(content.len());
    let mut bytes = Vec::new();
    for &(_, t) in &content {
        let start = bytes.len();
        bytes.extend_from_slice(vocab.piece(t).unwrap_or(&[]));
        spans.push(start..bytes.len());
    }
    let (hyp_text, chars) = hyp_chars(&bytes);
    // token owning each hypothesis character: the token containing its first byte
    let owner: Vec<usize> = chars
        .iter()
        .map(|c| spans.iter().position(|s| s.contains(&c.byte)).unwrap_or(0))
        .collect();
    // tokens without surface bytes (UNK) produce nothing and are always wrong
    let mut wrong: Vec<bool> = spans.iter().map(|s| s.is_empty()).collect();
    let mut ref_parts: Vec<String> = vec![String::new(); content.len()];
    // a deletion before hypothesis char `p` goes to an empty token sitting in
    // that gap, else to the owner of the preceding char, else the first token
    let gap_owner = |p: usize| -> usize {
        let at = chars.get(p).map_or(bytes.len(), |c| c.byte);
        let lo = if p == 0 { 0 } else { owner[p - 1] };
        (lo..spans.len())
            .find(|&k| spans[k].is_empty() && spans[k].start == at)
            .unwrap_or(lo)
    };
    let a = align(reference, &hyp_text);
    let mut hyp_idx = 0usize;
    for op in &a.ops {
        match op.kind {
            EditKind::Match | EditKind::Sub => {
                let tok = owner[hyp_idx];
                if op.kind == EditKind::Sub {
                    wrong[tok] = true;
                }
                if let Some(r) = op.reference {
                    ref_parts[tok].push(r);
                }
                hyp_idx += 1;
            }
            EditKind::Ins => {
                wrong[owner[hyp_idx]] = true;
                hyp_idx += 1;
            }
            EditKind::Del => {
                if content.is_empty() {
                    continue;
                }
                let tok = gap_owner(hyp_idx);
                wrong[tok] = true;
                if let Some(r) = op.reference {
                    ref_parts[tok].push(r);
                }
            }
        }
    }
    content
        .iter()
        .enumerate()
        .map(|(k, &(pos, chosen))| {
            let step = &result.steps[pos];
            let top3: Vec<(TokenId, f64)> = step.top.iter().take(3).copied().collect();
            let rel = step.relative_prob();
            let correct_token = if !wrong[k] {
                Some(chosen)
            } else {
                let enc = vocab.encode_text(&ref_parts[k]);
                (enc.len() == 1).then(|| enc[0])
            };
            let recoverable = correct_token.is_some_and(|c| top3.iter().any(|(t, _)| *t == c));
            UncertaintyRecord {
                line: line.to_string(),
                position: pos,
                chosen,
                top3,
                relative_prob: rel,
                flagged: rel >= threshold,
                is_error: wrong[k],
                correct_token,
                recoverable,
            }
        })
        .collect()
}

/// Token-level uncertainty over decoded lines `(id, reference, result)`.
pub fn uncertainty_scan<V: Vocabulary>(
    items: &[(String, String, DecodeResult)],
    vocab: &V,
    threshold: f64,
) -> UncertaintyReport {
    let records: Vec<UncertaintyRecord> = items
        .iter()
        .flat_map(|(id, reference, r)| label_tokens(id, reference, r, vocab, threshold))
        .collect();
    let stats = flag_stats(&records, threshold);
    let recoverable_errors = records.iter().filter(|r| r.is_error && r.recoverable).count();
    let recoverable_flagged = records.iter().filter(|r| r.is_error && r.flagged && r.recoverable).count();
    UncertaintyReport {
        records,
        stats,
        recoverable_errors,
        recoverable_flagged,
    }
}

pub fn uncertainty_csv(records: &[UncertaintyRecord]) -> String {
    let mut out = String::from("line,position,chosen,top1,p1,top2,p2,top3,p3,relative_prob,flagged,is_error,correct_token,recoverable\n");
    for r in records {
        let mut cells = Vec::new();
        for i in 0..3 {
            match r.top3.get(i) {
                Some((t, p)) => cells.push(format!("{t},{p}")),
                None => cells.push(",".into()),
            }
        }
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            csv_field(&r.line),
            r.position,
            r.chosen,
            cells.join(","),
            r.relative_prob,
            r.flagged,
            r.is_error,
            r.correct_token.map(|t| t.to_string()).unwrap_or_default(),
            r.recoverable
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub best: FlagStats,
    pub curve: Vec<FlagStats>,
}

/// F1 over a threshold grid; the best threshold is the smallest one reaching
/// the maximum F1.
pub fn threshold_sweep(records: &[UncertaintyRecord], grid: &[f64]) -> Result<Sweep> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("threshold grid"));
    }
    let mut sorted: Vec<f64> = grid.to_vec();
    if sorted.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("non-finite threshold".into()));
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    sorted.dedup();
    let curve: Vec<FlagStats> = sorted.iter().map(|&t| flag_stats(records, t)).collect();
    let best = *curve
        .iter()
        .reduce(|best, s| if s.f1 > best.f1 { s } else { best })
        .expect("non-empty grid");
    Ok(Sweep { best, curve })
}

/// Thresholds 0.001, 0.002, …, 1.000.
pub fn default_threshold_grid() -> Vec<f64> {
    (1..=1000).map(|i| i as f64 / 1000.0).collect()
}

pub fn sweep_csv(sweep: &Sweep) -> String {
    let mut out = String::from("threshold,flagged,true_positives,precision,recall,f1\n");
    for s in &sweep.curve {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.threshold, s.flagged, s.true_positives, s.precision, s.recall, s.f1
        );
    }
    out
}

/// Substitution heatmap over the `n` characters most involved in
/// substitutions: reference on rows, hypothesis on columns, darker cells for
/// larger counts.
pub fn confusion_heatmap(m: &ConfusionMatrix, n: usize, cell: u32) -> Result<(GrayImage, Vec<char>)> {
    let mut involvement: BTreeMap<char, u64> = BTreeMap::new();
    for ((r, h), c) in &m.substitutions {
        *involvement.entry(*r).or_default() += c;
        *involvement.entry(*h).or_default() += c;
    }
    let mut ranked: Vec<(char, u64)> = involvement.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let chars: Vec<char> = ranked.into_iter().take(n).map(|(c, _)| c).collect();
    let k = chars.len().max(1) as u32;
    let max = m.substitutions.values().copied().max().unwrap_or(0);
    let idx: BTreeMap<char, usize> = chars.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let mut grid = vec![0u64; (k * k) as usize];
    for ((r, h), c) in &m.substitutions {
        if let (Some(&i), Some(&j)) = (idx.get(r), idx.get(h)) {
            grid[i * k as usize + j] = *c;
        }
    }
    let cell = cell.max(1);
    let img = GrayImage::from_fn(k * cell, k * cell, |x, y| {
        let v = grid[((y / cell) * k + x / cell) as usize];
        if max == 0 {
            255
        } else {
            (255 - (v * 255 + max / 2) / max) as u8
        }
    })?;
    Ok((img, chars))
}

#[derive(Serialize)]
struct SummaryJson<'a> {
    lines: usize,
    errors: ErrorTotals,
    top_error_share: &'a [ErrorShare],
    top10_share: f64,
    distinct_error_chars: usize,
    uncertainty: Option<UncertaintyJson<'a>>,
}

#[derive(Serialize)]
struct ErrorTotals {
    substitutions: u64,
    deletions: u64,
    insertions: u64,
    total: u64,
}

#[derive(Serialize)]
struct UncertaintyJson<'a> {
    tokens: usize,
    at_threshold: &'a FlagStats,
    recoverable_errors: usize,
    recoverable_flagged: usize,
    sweep_best: Option<&'a FlagStats>,
}

/// Everything the analysis command writes.
pub struct AnalysisInputs<'a> {
    pub alignments: &'a [(String, Alignment<char>)],
    pub uncertainty: Option<&'a UncertaintyReport>,
    pub sweep: Option<&'a Sweep>,
    pub histogram_width: Rate,
    pub length_edges: Vec<u64>,
}

/// Writes CSV tables, `summary.json` and `heatmap.png` into `dir`.
pub fn write_reports(dir: &Path, inputs: &AnalysisInputs) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let matrix = build_confusion(inputs.alignments.iter().map(|(_, a)| a));
    let shares = error_share(&matrix, None);
    let per_line: Vec<(u64, Rate)> = inputs
        .alignments
        .iter()
        .filter(|(_, a)| a.counts.reference_len() > 0)
        .map(|(_, a)| {
            let n = a.counts.reference_len();
            (n, rate(a.counts.errors(), n))
        })
        .collect();
    let cers: Vec<Rate> = per_line.iter().map(|(_, c)| c.clone()).collect();
    let hist = cer_histogram(&cers, &inputs.histogram_width)?;
    let by_len = cer_vs_length(&per_line, &inputs.length_edges)?;
    let (heat, _) = confusion_heatmap(&matrix, 30, 8)?;
    let total = matrix.total_errors();
    let top10: u64 = shares.iter().take(10).map(|s| s.count).sum();
    let summary = SummaryJson {
        lines: inputs.alignments.len(),
        errors: ErrorTotals {
            substitutions: matrix.total_substitutions(),
            deletions: matrix.total_deletions(),
            insertions: matrix.total_insertions(),
            total,
        },
        top_error_share: &shares[..shares.len().min(10)],
        top10_share: if total > 0 { top10 as f64 / total as f64 } else { 0.0 },
        distinct_error_chars: shares.len(),
        uncertainty: inputs.uncertainty.map(|u| UncertaintyJson {
            tokens: u.records.len(),
            at_threshold: &u.stats,
            recoverable_errors: u.recoverable_errors,
            recoverable_flagged: u.recoverable_flagged,
            sweep_best: inputs.sweep.map(|s| &s.best),
        }),
    };
    let mut files: Vec<(&str, Vec<u8>)> = vec![
        ("confusion.csv", matrix.to_csv().into_bytes()),
        ("error_share.csv", error_share_csv(&shares).into_bytes()),
        ("cer_histogram.csv", histogram_csv(&hist).into_bytes()),
        ("cer_by_length.csv", length_bins_csv(&by_len).into_bytes()),
        (
            "summary.json",
            (serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n").into_bytes(),
        ),
        ("heatmap.png", heat.encode_png()?),
    ];
    if let Some(u) = inputs.uncertainty {
        files.push(("uncertainty.csv", uncertainty_csv(&u.records).into_bytes()));
    }
    if let Some(s) = inputs.sweep {
        files.push(("threshold_sweep.csv", sweep_csv(s).into_bytes()));
    }
    let mut written = Vec::new();
    for (name, bytes) in files {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        written.push(name.to_string());
    }
    Ok(written)
}

/// Characters that appear in any confusion, in codepoint order.
pub fn confused_chars(m: &ConfusionMatrix) -> BTreeSet<char> {
    let mut s = BTreeSet::new();
    for (r, h) in m.substitutions.keys() {
        s.insert(*r);
        s.insert(*h);
    }
    s.extend(m.deletions.keys());
    s.extend(m.insertions.keys());
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{train_bpe, BpeMode};

    #[test]
    fn confusion_fixtures() {
        let m = build_confusion(&[align("abcd", "abxd")]);
        assert_eq!(m.substitutions, BTreeMap::from([(('c', 'x'), 1)]));
        assert!(m.deletions.is_empty() && m.insertions.is_empty());
        assert!(build_confusion(&[align("same", "same")]).is_empty());
        let d = build_confusion(&[align("ab", "a")]);
        assert_eq!(d.deletions, BTreeMap::from([('b', 1)]));
        let i = build_confusion(&[align("a", "ab")]);
        assert_eq!(i.insertions, BTreeMap::from([('b', 1)]));
    }

    #[test]
    fn share_fixtures() {
        let mut m = ConfusionMatrix::default();
        m.deletions.insert('x', 4);
        m.substitutions.insert(('y', 'z'), 6);
        let s = error_share(&m, None);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].ch, s[0].count), ('y', 6));
        assert!((s[0].share - 0.6).abs() < 1e-15 && (s[1].share - 0.4).abs() < 1e-15);
        assert!(error_share(&ConfusionMatrix::default(), None).is_empty());
        let mut t = ConfusionMatrix::default();
        t.deletions.insert('b', 2);
        t.deletions.insert('a', 2);
        let s = error_share(&t, Some(1));
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].ch, 'a');
    }

    #[test]
    fn histogram_cases() {
        let w = rate(1, 20);
        let h = cer_histogram(&[rate(0, 1), rate(0, 1)], &w).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].count, 2);
        let h = cer_histogram(&[rate(1, 20), rate(1, 21), rate(3, 10)], &w).unwrap();
        // 1/20 sits on an edge and belongs to the second bin
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), vec![1, 1, 0, 0, 0, 0, 1]);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 3);
        assert!(cer_histogram(&[], &rate(0, 1)).is_err());
        assert_eq!(cer_histogram(&[], &w).unwrap().len(), 1);
    }

    #[test]
    fn length_bins() {
        let lines = [(10, rate(1, 10)), (30, rate(0, 1))];
        let b = cer_vs_length(&lines, &[0]).unwrap();
        assert_eq!(b[0].weighted_cer, Some(rate(1, 40)));
        let b = cer_vs_length(&lines, &[0, 20, 100, 200]).unwrap();
        assert_eq!(b[0].weighted_cer, Some(rate(1, 10)));
        assert_eq!(b[1].weighted_cer, Some(rate(0, 1)));
        assert_eq!(b[2].weighted_cer, None);
        assert_eq!(b[3].hi, None);
        assert!(cer_vs_length(&lines, &[5, 5]).is_err());
    }

    fn rec(ratio: f64, err: bool) -> UncertaintyRecord {
        UncertaintyRecord {
            line: "l".into(),
            position: 0,
            chosen: 4,
            top3: vec![(4, 1.0 / (1.0 + ratio)), (5, ratio / (1.0 + ratio))],
            relative_prob: ratio,
            flagged: false,
            is_error: err,
            correct_token: None,
            recoverable: false,
        }
    }

    #[test]
    fn flag_arithmetic() {
        // 4 errors, 2 flagged errors, 2 flagged correct
        let recs = vec![
            rec(0.5, true),
            rec(0.6, true),
            rec(0.01, true),
            rec(0.02, true),
            rec(0.4, false),
            rec(0.3, false),
            rec(0.001, false),
        ];
        let s = flag_stats(&recs, 0.1);
        assert_eq!((s.flagged, s.errors, s.true_positives), (4, 4, 2));
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
        let none = flag_stats(&[rec(0.001, false)], 0.5);
        assert_eq!((none.precision, none.recall, none.precision_defined), (0.0, 0.0, false));
        assert!((relative_prob(&[(1, 0.8), (2, 0.2)]) - 0.25).abs() < 1e-15);
        assert!(0.25 >= DEFAULT_THRESHOLD);
    }

    #[test]
    fn sweep_finds_separator() {
        let mut recs: Vec<_> = [0.01, 0.02, 0.03].iter().map(|&r| rec(r, false)).collect();
        recs.extend([0.2, 0.5, 0.9].iter().map(|&r| rec(r, true)));
        let s = threshold_sweep(&recs, &default_threshold_grid()).unwrap();
        assert_eq!(s.best.f1, 1.0);
        assert_eq!(s.best.threshold, 0.031);
        assert!(threshold_sweep(&recs, &[]).is_err());
        let one = threshold_sweep(&recs[..1], &[0.5]).unwrap();
        assert_eq!(one.curve.len(), 1);
    }

    fn result_for(vocab: &crate::tokenizer::BpeModel, tokens: Vec<TokenId>, alt: TokenId) -> DecodeResult {
        let mut tokens = tokens;
        tokens.push(EOS);
        let steps = tokens
            .iter()
            .map(|&t| StepRecord {
                chosen: t,
                top: vec![(t, 0.6), (if t == alt { 4 } else { alt }, 0.3), (3, 0.05)],
            })
            .collect();
        let _ = vocab;
        DecodeResult {
            tokens,
            steps,
            log_prob: 0.0,
            probability: 0.0,
            truncated: false,
        }
    }

    #[test]
    fn token_labels_follow_alignment() {
        let vocab = train_bpe(&["ab cd", "x"], 12, BpeMode::Char).unwrap();
        let d = vocab.token_id(b"d").unwrap();
        let x = vocab.token_id(b"x").unwrap();
        let mut toks = vocab.encode("ab c");
        toks.push(x);
        let r = result_for(&vocab, toks.clone(), d);
        let recs = label_tokens("l", "ab cd", &r, &vocab, 0.034);
        assert_eq!(recs.len(), toks.len());
        let errs: Vec<_> = recs.iter().filter(|r| r.is_error).collect();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].chosen, x);
        assert_eq!(errs[0].correct_token, Some(d));
        assert!(errs[0].recoverable && errs[0].flagged);
        assert!(recs.iter().filter(|r| !r.is_error).all(|r| r.correct_token == Some(r.chosen)));
    }

    #[test]
    fn unknown_token_takes_the_deletion() {
        let vocab = train_bpe(&["ab cd"], 10, BpeMode::Char).unwrap();
        let d = vocab.token_id(b"d").unwrap();
        let toks = vocab.encode("ab cq");
        assert_eq!(*toks.last().unwrap(), crate::tokenizer::UNK);
        let recs = label_tokens("l", "ab cd", &result_for(&vocab, toks, d), &vocab, 0.6);
        let errs: Vec<_> = recs.iter().filter(|r| r.is_error).collect();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].chosen, crate::tokenizer::UNK);
        assert_eq!(errs[0].correct_token, Some(d));
        assert!(!errs[0].flagged);
    }

    #[test]
    fn deletion_at_start_goes_to_first_token() {
        let vocab = train_bpe(&["abc"], 8, BpeMode::Char).unwrap();
        let toks = vocab.encode("bc");
        let recs = label_tokens("l", "abc", &result_for(&vocab, toks, 4), &vocab, 0.5);
        assert!(recs[0].is_error);
        assert!(recs[1..].iter().all(|r| !r.is_error));
    }

    #[test]
    fn heatmap_shape() {
        let m = build_confusion(&[align("abcd", "abxd"), align("aaaa", "bbbb")]);
        let (img, chars) = confusion_heatmap(&m, 30, 4).unwrap();
        assert_eq!(img.width(), chars.len() as u32 * 4);
        assert!(img.pixels().contains(&0));
    }
}
