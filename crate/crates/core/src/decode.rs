//! Decoding strategies over an abstract next-token scorer: greedy, beam
//! search, contrastive search, and temperature / top-k / top-p sampling.
//!
//! Prefixes passed to a [`Scorer`] hold generated tokens only; BOS is implicit.
//! Ranking ties are always broken towards the lower token id, so every
//! deterministic strategy is a pure function of the scorer.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{evaluate, EvalOptions, Prediction, Rate};
use crate::rng::{derive_seed, Rng};
use crate::tokenizer::{TokenId, Vocabulary, NUM_SPECIALS};
use crate::{Error, Result};

const SUM_TOLERANCE: f64 = 1e-9;

/// Next-token distribution provider.
pub trait Scorer: Sync {
    fn vocab_size(&self) -> usize;

    fn eos(&self) -> TokenId;

    /// Probabilities over the whole vocabulary after `prefix`.
    fn distribution(&self, prefix: &[TokenId]) -> Result<Vec<f64>>;

    /// Representation of `token` as the continuation of `prefix`, for
    /// similarity penalties. `None` when the scorer has no representations.
    fn representation(&self, _prefix: &[TokenId], _token: TokenId) -> Option<Vec<f64>> {
        None
    }
}

fn checked_distribution<S: Scorer + ?Sized>(scorer: &S, prefix: &[TokenId]) -> Result<Vec<f64>> {
    let d = scorer.distribution(prefix)?;
    if d.len() != scorer.vocab_size() {
        return Err(Error::InvalidScorer(format!(
            "distribution has {} entries for vocabulary {}",
            d.len(),
            scorer.vocab_size()
        )));
    }
    if d.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidScorer("negative or non-finite probability".into()));
    }
    let sum: f64 = d.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidScorer(format!("probabilities sum to {sum}")));
    }
    Ok(d)
}

/// Token ids ordered by descending probability, ties by ascending id.
pub fn ranked(dist: &[f64]) -> Vec<TokenId> {
    let mut ids: Vec<TokenId> = (0..dist.len() as TokenId).collect();
    ids.sort_by(|&a, &b| {
        dist[b as usize]
            .partial_cmp(&dist[a as usize])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    ids
}

fn argmax(dist: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best as TokenId
}

/// The most probable candidates at one step, sorted descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub chosen: TokenId,
    pub top: Vec<(TokenId, f64)>,
}

impl StepRecord {
    fn new(dist: &[f64], chosen: TokenId, top_n: usize) -> Self {
        let n = if top_n == 0 { dist.len() } else { top_n.min(dist.len()) };
        let top = ranked(dist).into_iter().take(n).map(|t| (t, dist[t as usize])).collect();
        StepRecord { chosen, top }
    }

    /// `p₂ / p₁` of the two leading candidates (0 when fewer than two).
    pub fn relative_prob(&self) -> f64 {
        match self.top.as_slice() {
            [(_, p1), (_, p2), ..] if *p1 > 0.0 => p2 / p1,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Generated tokens, ending with EOS unless truncated.
    pub tokens: Vec<TokenId>,
    pub steps: Vec<StepRecord>,
    /// Sum of ln p over the chosen tokens under the scorer's distribution.
    pub log_prob: f64,
    /// Product of the chosen tokens' probabilities.
    pub probability: f64,
    /// Set when `max_len` was reached without EOS.
    pub truncated: bool,
}

impl DecodeResult {
    /// Tokens with EOS and other specials removed.
    pub fn content_tokens(&self) -> Vec<TokenId> {
        self.tokens
            .iter()
            .copied()
            .filter(|&t| t as usize >= NUM_SPECIALS)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Beam { width: usize },
    Contrastive { k: usize, alpha: f64 },
    Temperature { tau: f64 },
    TopK { k: usize },
    TopP { p: f64 },
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Beam { .. } => "beam",
            Strategy::Contrastive { .. } => "contrastive",
            Strategy::Temperature { .. } => "temperature",
            Strategy::TopK { .. } => "top_k",
            Strategy::TopP { .. } => "top_p",
        }
    }

    pub fn params(&self) -> String {
        match self {
            Strategy::Greedy => String::new(),
            Strategy::Beam { width } => format!("width={width}"),
            Strategy::Contrastive { k, alpha } => format!("k={k};alpha={alpha}"),
            Strategy::Temperature { tau } => format!("tau={tau}"),
            Strategy::TopK { k } => format!("k={k}"),
            Strategy::TopP { p } => format!("p={p}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDecodeConfig(m));
        match *self {
            Strategy::Beam { width } if width < 1 => bad(format!("beam width {width} < 1")),
            Strategy::Contrastive { k, .. } | Strategy::TopK { k } if k < 1 => bad(format!("k {k} < 1")),
            Strategy::Contrastive { alpha, .. } if !(0.0..=1.0).contains(&alpha) => {
                bad(format!("alpha {alpha} outside [0, 1]"))
            }
            Strategy::Temperature { tau } if !(tau > 0.0 && tau.is_finite()) => bad(format!("tau {tau} must be > 0")),
            Strategy::TopP { p } if !(p > 0.0 && p <= 1.0) => bad(format!("p {p} outside (0, 1]")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    #[serde(flatten)]
    pub strategy: Strategy,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Candidates kept per step record; 0 keeps the full distribution.
    #[serde(default = "default_top")]
    pub record_top: usize,
}

fn default_max_len() -> usize {
    256
}
fn default_seed() -> u64 {
    42
}
fn default_top() -> usize {
    5
}

impl DecodeConfig {
    pub fn new(strategy: Strategy) -> Self {
        DecodeConfig {
            strategy,
            max_len: default_max_len(),
            seed: default_seed(),
            record_top: default_top(),
        }
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::InvalidDecodeConfig("max_len must be positive".into()));
        }
        self.strategy.validate()
    }
}

/// Runs the configured strategy.
pub fn decode<S: Scorer + ?Sized>(scorer: &S, cfg: &DecodeConfig) -> Result<DecodeResult> {
    cfg.validate()?;
    let top = cfg.record_top;
    match cfg.strategy {
        Strategy::Greedy => greedy_n(scorer, cfg.max_len, top),
        Strategy::Beam { width } => beam_n(scorer, width, cfg.max_len, top),
        Strategy::Contrastive { k, alpha } => contrastive_n(scorer, k, alpha, cfg.max_len, top),
        s @ (Strategy::Temperature { .. } | Strategy::TopK { .. } | Strategy::TopP { .. }) => {
            sample_n(scorer, s, cfg.seed, cfg.max_len, top)
        }
    }
}

struct Builder {
    tokens: Vec<TokenId>,
    steps: Vec<StepRecord>,
    log_prob: f64,
    probability: f64,
}

impl Builder {
    fn new() -> Self {
        Builder {
            tokens: Vec::new(),
            steps: Vec::new(),
            log_prob: 0.0,
            probability: 1.0,
        }
    }

    fn push(&mut self, dist: &[f64], t: TokenId, top: usize) {
        let p = dist[t as usize];
        self.tokens.push(t);
        self.steps.push(StepRecord::new(dist, t, top));
        self.log_prob += p.ln();
        self.probability *= p;
    }

    fn finish(self, eos: TokenId) -> DecodeResult {
        let truncated = self.tokens.last() != Some(&eos);
        DecodeResult {
            tokens: self.tokens,
            steps: self.steps,
            log_prob: self.log_prob,
            probability: self.probability,
            truncated,
        }
    }
}

/// Argmax at every step, lowest id on ties.
pub fn greedy<S: Scorer + ?Sized>(scorer: &S, max_len: usize) -> Result<DecodeResult> {
    greedy_n(scorer, max_len, default_top())
}

fn greedy_n<S: Scorer + ?Sized>(scorer: &S, max_len: usize, top: usize) -> Result<DecodeResult> {
    let eos = scorer.eos();
    let mut b = Builder::new();
    for _ in 0..max_len {
        let dist = checked_distribution(scorer, &b.tokens)?;
        let t = argmax(&dist);
        b.push(&dist, t, top);
        if t == eos {
            break;
        }
    }
    Ok(b.finish(eos))
}

#[derive(Clone)]
struct Hyp {
    tokens: Vec<TokenId>,
    steps: Vec<StepRecord>,
    log_prob: f64,
    probability: f64,
}

/// Beam search over summed log-probabilities, no length normalization.
///
/// Each step expands every live hypothesis, ranks all candidates by
/// `(score desc, token asc, parent asc)` and keeps the best `width`.
/// Candidates ending in EOS retire to the finished pool. The result is the
/// best finished hypothesis, or the best live one (flagged truncated) if none
/// finished within `max_len`.
pub fn beam<S: Scorer + ?Sized>(scorer: &S, width: usize, max_len: usize) -> Result<DecodeResult> {
    beam_n(scorer, width, max_len, default_top())
}

fn beam_n<S: Scorer + ?Sized>(scorer: &S, width: usize, max_len: usize, top: usize) -> Result<DecodeResult> {
    if width == 0 {
        return Err(Error::InvalidDecodeConfig("beam width 0".into()));
    }
    let eos = scorer.eos();
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        steps: Vec::new(),
        log_prob: 0.0,
        probability: 1.0,
    }];
    let mut finished: Vec<Hyp> = Vec::new();
    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let dists: Vec<Vec<f64>> = live
            .par_iter()
            .map(|h| checked_distribution(scorer, &h.tokens))
            .collect::<Result<_>>()?;
        let mut cands: Vec<(f64, TokenId, usize)> = Vec::new();
        for (parent, (h, d)) in live.iter().zip(&dists).enumerate() {
            for (t, &p) in d.iter().enumerate() {
                if p > 0.0 {
                    cands.push((h.log_prob + p.ln(), t as TokenId, parent));
                }
            }
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        cands.truncate(width);
        let mut next = Vec::with_capacity(width);
        for (score, t, parent) in cands {
            let h = &live[parent];
            let d = &dists[parent];
            let mut tokens = h.tokens.clone();
            tokens.push(t);
            let mut steps = h.steps.clone();
            steps.push(StepRecord::new(d, t, top));
            let hyp = Hyp {
                tokens,
                steps,
                log_prob: score,
                probability: h.probability * d[t as usize],
            };
            if t == eos {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        live = next;
    }
    let pick = |pool: Vec<Hyp>| {
        pool.into_iter().reduce(|best, h| {
            if h.log_prob > best.log_prob {
                h
            } else {
                best
            }
        })
    };
    let (best, truncated) = match pick(finished) {
        Some(h) => (h, false),
        None => (pick(live).expect("a live hypothesis remains when none finished"), true),
    };
    Ok(DecodeResult {
        tokens: best.tokens,
        steps: best.steps,
        log_prob: best.log_prob,
        probability: best.probability,
        truncated,
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Contrastive search: among the `k` most probable candidates choose the
/// maximizer of `(1 − α)·p(v) − α·max_j cos(h_v, h_j)`, where `h_j` ranges
/// over the representations of previously chosen tokens. Ties keep the
/// higher-ranked candidate.
pub fn contrastive<S: Scorer + ?Sized>(scorer: &S, k: usize, alpha: f64, max_len: usize) -> Result<DecodeResult> {
    contrastive_n(scorer, k, alpha, max_len, default_top())
}

fn contrastive_n<S: Scorer + ?Sized>(
    scorer: &S,
    k: usize,
    alpha: f64,
    max_len: usize,
    top: usize,
) -> Result<DecodeResult> {
    Strategy::Contrastive { k, alpha }.validate()?;
    let eos = scorer.eos();
    let mut b = Builder::new();
    let mut history: Vec<Vec<f64>> = Vec::new();
    for _ in 0..max_len {
        let dist = checked_distribution(scorer, &b.tokens)?;
        let mut best: Option<(f64, TokenId, Vec<f64>)> = None;
        for t in ranked(&dist).into_iter().take(k) {
            let rep = scorer.representation(&b.tokens, t).ok_or_else(|| {
                Error::MissingRepresentations
            })?;
            let penalty = history.iter().map(|h| cosine(&rep, h)).fold(f64::NEG_INFINITY, f64::max);
            let penalty = if history.is_empty() { 0.0 } else { penalty };
            let score = (1.0 - alpha) * dist[t as usize] - alpha * penalty;
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, t, rep));
            }
        }
        let (_, t, rep) = best.expect("k >= 1 candidates");
        history.push(rep);
        b.push(&dist, t, top);
        if t == eos {
            break;
        }
    }
    Ok(b.finish(eos))
}

/// The sampling distribution for one step, as `(token, weight)` in ranked order.
fn sampling_support(dist: &[f64], strategy: Strategy) -> Vec<(TokenId, f64)> {
    let order = ranked(dist);
    match strategy {
        Strategy::Temperature { tau } => {
            let max_ln = dist
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|p| p.ln())
                .fold(f64::NEG_INFINITY, f64::max);
            order
                .into_iter()
                .filter(|&t| dist[t as usize] > 0.0)
                .map(|t| (t, ((dist[t as usize].ln() - max_ln) / tau).exp()))
                .collect()
        }
        Strategy::TopK { k } => order
            .into_iter()
            .take(k)
            .filter(|&t| dist[t as usize] > 0.0)
            .map(|t| (t, dist[t as usize]))
            .collect(),
        Strategy::TopP { p } => {
            let mut out = Vec::new();
            let mut cum = 0.0;
            for t in order {
                let q = dist[t as usize];
                if q <= 0.0 {
                    break;
                }
                out.push((t, q));
                cum += q;
                if cum >= p {
                    break;
                }
            }
            out
        }
        _ => unreachable!("not a sampling strategy"),
    }
}

fn draw(support: &[(TokenId, f64)], rng: &mut Rng) -> TokenId {
    let total: f64 = support.iter().map(|(_, w)| w).sum();
    let u = rng.next_f64() * total;
    let mut cum = 0.0;
    for &(t, w) in support {
        cum += w;
        if u < cum {
            return t;
        }
    }
    support.last().expect("non-empty support").0
}

/// Temperature, top-k or top-p sampling with one PRNG draw per step.
/// Log-probabilities are reported under the unmodified distribution.
pub fn sample<S: Scorer + ?Sized>(scorer: &S, strategy: Strategy, seed: u64, max_len: usize) -> Result<DecodeResult> {
    sample_n(scorer, strategy, seed, max_len, default_top())
}

fn sample_n<S: Scorer + ?Sized>(
    scorer: &S,
    strategy: Strategy,
    seed: u64,
    max_len: usize,
    top: usize,
) -> Result<DecodeResult> {
    strategy.validate()?;
    if !matches!(strategy, Strategy::Temperature { .. } | Strategy::TopK { .. } | Strategy::TopP { .. }) {
        return Err(Error::InvalidDecodeConfig(format!("{} is not a sampling strategy", strategy.name())));
    }
    let eos = scorer.eos();
    let mut rng = Rng::new(seed);
    let mut b = Builder::new();
    for _ in 0..max_len {
        let dist = checked_distribution(scorer, &b.tokens)?;
        let support = sampling_support(&dist, strategy);
        let t = draw(&support, &mut rng);
        b.push(&dist, t, top);
        if t == eos {
            break;
        }
    }
    Ok(b.finish(eos))
}

/// First-order Markov scorer: the distribution depends on the last token only.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovScorer {
    labels: Vec<String>,
    eos: TokenId,
    start: Vec<f64>,
    rows: Vec<Vec<f64>>,
    embeddings: Option<Vec<Vec<f64>>>,
}

pub const MARKOV_START: &str = "<start>";

#[derive(Serialize, Deserialize)]
struct MarkovFile {
    vocab: Vec<String>,
    eos: String,
    transitions: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embeddings: Option<BTreeMap<String, Vec<f64>>>,
}

impl MarkovScorer {
    /// `rows[t]` is the distribution after token `t`; the row for EOS is unused.
    pub fn new(
        labels: Vec<String>,
        eos: TokenId,
        start: Vec<f64>,
        rows: Vec<Vec<f64>>,
        embeddings: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let v = labels.len();
        if v == 0 || eos as usize >= v {
            return Err(Error::InvalidScorer("EOS outside vocabulary".into()));
        }
        if rows.len() != v {
            return Err(Error::InvalidScorer(format!("{} rows for vocabulary {v}", rows.len())));
        }
        for (i, row) in std::iter::once(&start).chain(&rows).enumerate() {
            if i > 0 && i - 1 == eos as usize {
                continue;
            }
            if row.len() != v || row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidScorer(format!("row {i} is not a distribution over {v} tokens")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::InvalidScorer(format!("row {i} sums to {s}")));
            }
        }
        if let Some(e) = &embeddings {
            if e.len() != v || e.iter().any(|r| r.len() != e[0].len()) {
                return Err(Error::InvalidScorer("embeddings must be one equal-length vector per token".into()));
            }
        }
        Ok(MarkovScorer {
            labels,
            eos,
            start,
            rows,
            embeddings,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn id_of(&self, label: &str) -> Option<TokenId> {
        self.labels.iter().position(|l| l == label).map(|i| i as TokenId)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: MarkovFile = serde_json::from_str(text).map_err(|e| Error::json("markov scorer", e))?;
        let index: BTreeMap<&str, usize> = f.vocab.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        if index.len() != f.vocab.len() {
            return Err(Error::InvalidScorer("duplicate vocabulary label".into()));
        }
        let lookup = |l: &str| {
            index
                .get(l)
                .copied()
                .ok_or_else(|| Error::InvalidScorer(format!("unknown token label {l:?}")))
        };
        let eos = lookup(&f.eos)? as TokenId;
        let v = f.vocab.len();
        let mut start = None;
        let mut rows = vec![vec![0.0; v]; v];
        rows[eos as usize][eos as usize] = 1.0;
        let mut seen = vec![false; v];
        for (from, dist) in &f.transitions {
            let mut row = vec![0.0; v];
            for (to, p) in dist {
                row[lookup(to)?] = *p;
            }
            if from == MARKOV_START {
                start = Some(row);
            } else {
                let i = lookup(from)?;
                seen[i] = true;
                rows[i] = row;
            }
        }
        let start = start.ok_or_else(|| Error::InvalidScorer(format!("missing {MARKOV_START} row")))?;
        if let Some(i) = (0..v).find(|&i| i != eos as usize && !seen[i]) {
            return Err(Error::InvalidScorer(format!("missing transition row for {:?}", f.vocab[i])));
        }
        let embeddings = match f.embeddings {
            None => None,
            Some(map) => Some(
                f.vocab
                    .iter()
                    .map(|l| {
                        map.get(l)
                            .cloned()
                            .ok_or_else(|| Error::InvalidScorer(format!("missing embedding for {l:?}")))
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        MarkovScorer::new(f.vocab, eos, start, rows, embeddings)
    }

    pub fn to_json(&self) -> String {
        let row_map = |row: &[f64]| {
            row.iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(i, p)| (self.labels[i].clone(), *p))
                .collect::<BTreeMap<_, _>>()
        };
        let mut transitions = BTreeMap::new();
        transitions.insert(MARKOV_START.to_string(), row_map(&self.start));
        for (i, row) in self.rows.iter().enumerate() {
            if i != self.eos as usize {
                transitions.insert(self.labels[i].clone(), row_map(row));
            }
        }
        let f = MarkovFile {
            vocab: self.labels.clone(),
            eos: self.labels[self.eos as usize].clone(),
            transitions,
            embeddings: self.embeddings.as_ref().map(|e| {
                self.labels.iter().cloned().zip(e.iter().cloned()).collect()
            }),
        };
        serde_json::to_string_pretty(&f).expect("scorer serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Random scorer with strictly positive rows and random 4-d embeddings,
    /// for property testing.
    pub fn random(vocab: usize, seed: u64) -> Self {
        assert!(vocab >= 2, "need EOS plus one token");
        let mut rng = Rng::new(seed);
        let row = |rng: &mut Rng| {
            let w: Vec<f64> = (0..vocab).map(|_| rng.uniform(0.01, 1.0)).collect();
            let s: f64 = w.iter().sum();
            let mut r: Vec<f64> = w.iter().map(|x| x / s).collect();
            // absorb rounding so the row sums to 1 within tolerance
            let drift: f64 = 1.0 - r.iter().sum::<f64>();
            r[0] += drift;
            r
        };
        let start = row(&mut rng);
        let rows: Vec<Vec<f64>> = (0..vocab).map(|_| row(&mut rng)).collect();
        let emb: Vec<Vec<f64>> = (0..vocab)
            .map(|_| (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let labels = (0..vocab).map(|i| if i == 0 { "EOS".into() } else { format!("t{i}") }).collect();
        MarkovScorer::new(labels, 0, start, rows, Some(emb)).expect("random rows are distributions")
    }
}

impl Scorer for MarkovScorer {
    fn vocab_size(&self) -> usize {
        self.labels.len()
    }

    fn eos(&self) -> TokenId {
        self.eos
    }

    fn distribution(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        match prefix.last() {
            None => Ok(self.start.clone()),
            Some(&t) => self
                .rows
                .get(t as usize)
                .cloned()
                .ok_or_else(|| Error::InvalidScorer(format!("token {t} outside vocabulary"))),
        }
    }

    fn representation(&self, _prefix: &[TokenId], token: TokenId) -> Option<Vec<f64>> {
        self.embeddings.as_ref()?.get(token as usize).cloned()
    }
}

/// One recorded decoding step: sorted leading candidates of a line's distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStep {
    pub id: String,
    pub step: usize,
    pub dist: Vec<(TokenId, f64)>,
}

/// Per-line recorded distributions from an external recognizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySet {
    pub vocab_size: usize,
    pub eos: TokenId,
    pub lines: BTreeMap<String, Vec<Vec<(TokenId, f64)>>>,
}

/// Serves a line's recorded distributions by position, ignoring prefix content.
///
/// Mass not covered by the listed candidates is spread uniformly over the
/// remaining tokens. Past the last recorded step EOS has probability 1.
#[derive(Debug, Clone)]
pub struct ReplayScorer<'a> {
    vocab_size: usize,
    eos: TokenId,
    steps: &'a [Vec<(TokenId, f64)>],
}

impl ReplaySet {
    pub fn new(vocab_size: usize, eos: TokenId) -> Self {
        ReplaySet {
            vocab_size,
            eos,
            lines: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, steps: Vec<Vec<(TokenId, f64)>>) -> Result<()> {
        let id = id.into();
        for (i, s) in steps.iter().enumerate() {
            self.check_step(&id, i, s)?;
        }
        self.lines.insert(id, steps);
        Ok(())
    }

    fn check_step(&self, id: &str, step: usize, dist: &[(TokenId, f64)]) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidScorer(format!("{id} step {step}: {m}")));
        if dist.is_empty() {
            return bad("no candidates");
        }
        if dist.iter().any(|(t, p)| *t as usize >= self.vocab_size || !p.is_finite() || *p < 0.0) {
            return bad("token outside vocabulary or invalid probability");
        }
        if dist.windows(2).any(|w| w[0].1 < w[1].1) {
            return bad("candidates not sorted by descending probability");
        }
        let mut ids: Vec<TokenId> = dist.iter().map(|d| d.0).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != dist.len() {
            return bad("duplicate token");
        }
        let sum: f64 = dist.iter().map(|d| d.1).sum();
        if sum > 1.0 + SUM_TOLERANCE || (ids.len() == self.vocab_size && (sum - 1.0).abs() > SUM_TOLERANCE) {
            return bad("probabilities do not form a distribution");
        }
        Ok(())
    }

    /// Line ids in sorted order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.lines.keys().map(String::as_str)
    }

    pub fn scorer(&self, id: &str) -> Option<ReplayScorer<'_>> {
        self.lines.get(id).map(|steps| ReplayScorer {
            vocab_size: self.vocab_size,
            eos: self.eos,
            steps,
        })
    }

    /// JSONL: a header line `{"vocab_size", "eos"}` then one record per step.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&serde_json::json!({
            "vocab_size": self.vocab_size,
            "eos": self.eos,
        }))
        .expect("header serializes");
        out.push('\n');
        for (id, steps) in &self.lines {
            for (step, dist) in steps.iter().enumerate() {
                let rec = ReplayStep {
                    id: id.clone(),
                    step,
                    dist: dist.clone(),
                };
                out.push_str(&serde_json::to_string(&rec).expect("step serializes"));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            vocab_size: usize,
            eos: TokenId,
        }
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or(Error::EmptyInput("replay file"))?;
        let h: Header = serde_json::from_str(head).map_err(|e| Error::json("replay header", e))?;
        if h.eos as usize >= h.vocab_size {
            return Err(Error::InvalidScorer("EOS outside vocabulary".into()));
        }
        let mut set = ReplaySet::new(h.vocab_size, h.eos);
        let mut raw: BTreeMap<String, Vec<ReplayStep>> = BTreeMap::new();
        for (n, l) in lines {
            let rec: ReplayStep =
                serde_json::from_str(l).map_err(|e| Error::json(format!("replay line {}", n + 1), e))?;
            raw.entry(rec.id.clone()).or_default().push(rec);
        }
        for (id, mut recs) in raw {
            recs.sort_by_key(|r| r.step);
            if recs.iter().enumerate().any(|(i, r)| r.step != i) {
                return Err(Error::InvalidScorer(format!("{id}: steps are not 0..n")));
            }
            set.insert(id, recs.into_iter().map(|r| r.dist).collect())?;
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    /// Simulates a recognizer's per-step distributions over reference lines.
    ///
    /// At each reference token the leading candidate is wrong with probability
    /// `error_rate`; the correct token then sits at rank 2 (60%), rank 3 (25%)
    /// or outside the listed candidates. Wrong steps draw a high second-to-first
    /// ratio, correct steps a low one, with overlap. A final step puts EOS first.
    pub fn simulate<V: Vocabulary, I: AsRef<str>, T: AsRef<str>>(
        references: &[(I, T)],
        vocab: &V,
        vocab_size: usize,
        error_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        if vocab_size <= NUM_SPECIALS + 5 {
            return Err(Error::InvalidArgument("vocabulary too small to simulate".into()));
        }
        let eos = crate::tokenizer::EOS;
        let mut set = ReplaySet::new(vocab_size, eos);
        for (j, (id, text)) in references.iter().enumerate() {
            let mut rng = Rng::new(derive_seed(seed, &[j as u64]));
            let ids = vocab.encode_text(text.as_ref());
            let mut steps = Vec::with_capacity(ids.len() + 1);
            for &correct in ids.iter().chain(std::iter::once(&eos)) {
                let wrong = correct != eos && rng.chance(error_rate);
                let ratio = if wrong {
                    rng.uniform(0.02, 0.95)
                } else {
                    let u = rng.next_f64();
                    0.12 * u * u * u
                };
                let mut others = Vec::new();
                while others.len() < 4 {
                    let t = NUM_SPECIALS as TokenId + rng.below((vocab_size - NUM_SPECIALS) as u64) as TokenId;
                    if t != correct && !others.contains(&t) {
                        others.push(t);
                    }
                }
                let order: Vec<TokenId> = if wrong {
                    match rng.below(20) {
                        0..=11 => vec![others[0], correct, others[1], others[2], others[3]],
                        12..=16 => vec![others[0], others[1], correct, others[2], others[3]],
                        _ => others.clone(),
                    }
                } else {
                    vec![correct, others[0], others[1], others[2], others[3]]
                };
                let mut w = vec![1.0, ratio];
                for _ in 2..order.len() {
                    let prev = *w.last().expect("non-empty");
                    w.push(prev * rng.uniform(0.1, 0.9));
                }
                let tail = rng.uniform(0.001, 0.01);
                let total: f64 = w.iter().sum();
                steps.push(order.into_iter().zip(w).map(|(t, x)| (t, (1.0 - tail) * x / total)).collect());
            }
            set.insert(id.as_ref(), steps)?;
        }
        Ok(set)
    }
}

impl Scorer for ReplayScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn eos(&self) -> TokenId {
        self.eos
    }

    fn distribution(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let mut d = vec![0.0; self.vocab_size];
        let Some(step) = self.steps.get(prefix.len()) else {
            d[self.eos as usize] = 1.0;
            return Ok(d);
        };
        let listed: f64 = step.iter().map(|s| s.1).sum();
        let rest = self.vocab_size - step.len();
        if rest > 0 {
            let fill = ((1.0 - listed) / rest as f64).max(0.0);
            d.iter_mut().for_each(|p| *p = fill);
        }
        for &(t, p) in step {
            d[t as usize] = p;
        }
        Ok(d)
    }
}

/// The 27-entry sweep: beam widths, contrastive k and alpha pairs, temperatures, top-k and top-p values.
pub fn default_grid(max_len: usize, seed: u64) -> Vec<DecodeConfig> {
    let mut g = Vec::new();
    for width in [1, 5, 10, 20] {
        g.push(Strategy::Beam { width });
    }
    for k in [5, 10] {
        for alpha in [0.2, 0.6, 0.8] {
            g.push(Strategy::Contrastive { k, alpha });
        }
    }
    for tau in [0.2, 0.4, 0.6, 0.8, 0.9, 1.0] {
        g.push(Strategy::Temperature { tau });
    }
    for k in [3, 5, 10, 20, 50] {
        g.push(Strategy::TopK { k });
    }
    for p in [0.5, 0.6, 0.7, 0.8, 0.9, 0.95] {
        g.push(Strategy::TopP { p });
    }
    g.into_iter()
        .map(|s| DecodeConfig::new(s).with_max_len(max_len).with_seed(seed))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub config: DecodeConfig,
    pub mean_cer: Rate,
    pub weighted_cer: Rate,
    pub predictions: Vec<Prediction>,
}

/// Decodes every eval line under every distinct configuration and scores it.
///
/// `scorer_for(i, id)` supplies the scorer of line `i`. Sampling seeds are
/// `derive_seed(config.seed, [i])`, so results do not depend on scheduling.
pub fn run_grid<S, F, V>(
    scorer_for: F,
    eval: &[(String, String)],
    grid: &[DecodeConfig],
    vocab: &V,
) -> Result<Vec<GridRow>>
where
    S: Scorer,
    F: Fn(usize, &str) -> Result<S> + Sync,
    V: Vocabulary + Sync,
{
    let mut configs: Vec<DecodeConfig> = Vec::new();
    for c in grid {
        c.validate()?;
        if !configs.contains(c) {
            configs.push(*c);
        }
    }
    if configs.is_empty() {
        return Ok(Vec::new());
    }
    if eval.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    configs
        .iter()
        .map(|cfg| {
            let predictions: Vec<Prediction> = eval
                .par_iter()
                .enumerate()
                .map(|(i, (id, reference))| {
                    let scorer = scorer_for(i, id)?;
                    let line_cfg = cfg.with_seed(derive_seed(cfg.seed, &[i as u64]));
                    let r = decode(&scorer, &line_cfg)?;
                    Ok(Prediction {
                        id: id.clone(),
                        reference: reference.clone(),
                        hypothesis: vocab.decode_ids(&r.content_tokens()),
                    })
                })
                .collect::<Result<_>>()?;
            let summary = evaluate(&predictions, &EvalOptions::default())?;
            Ok(GridRow {
                config: *cfg,
                mean_cer: summary.mean_cer,
                weighted_cer: summary.weighted_cer,
                predictions,
            })
        })
        .collect()
}

/// CSV with one row per configuration.
pub fn grid_to_csv(rows: &[GridRow]) -> String {
    use crate::metrics::rate_to_f64;
    let mut out = String::from("strategy,params,mean_cer,weighted_cer,mean_cer_exact,weighted_cer_exact\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}/{},{}/{}\n",
            r.config.strategy.name(),
            r.config.strategy.params(),
            rate_to_f64(&r.mean_cer),
            rate_to_f64(&r.weighted_cer),
            r.mean_cer.numer(),
            r.mean_cer.denom(),
            r.weighted_cer.numer(),
            r.weighted_cer.denom()
        ));
    }
    out
}
