//! Byte-pair-encoding tokenizers in character and byte mode.
//!
//! Both modes share one implementation: tokens are byte strings. In
//! [`BpeMode::Char`] the base alphabet is the set of codepoints seen in the
//! training corpus (each token is the UTF-8 of one codepoint); in
//! [`BpeMode::Byte`] it is all 256 byte values, which makes encoding lossless.
//!
//! Lines are tokenized whole, without splitting on whitespace. Ids 0..=3 are
//! reserved for PAD, BOS, EOS and UNK and count towards the vocabulary size.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const NUM_SPECIALS: usize = 4;

/// Default vocabulary size, specials included.
pub const DEFAULT_VOCAB_SIZE: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BpeMode {
    Char,
    Byte,
}

impl std::str::FromStr for BpeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(BpeMode::Char),
            "byte" => Ok(BpeMode::Byte),
            other => Err(Error::InvalidArgument(format!("unknown BPE mode {other:?}"))),
        }
    }
}

/// Maps token ids to their surface bytes and text to ids.
pub trait Vocabulary {
    /// Surface bytes of `id`; `None` for special or unknown ids.
    fn piece(&self, id: TokenId) -> Option<&[u8]>;

    fn encode_text(&self, text: &str) -> Vec<TokenId>;

    /// Concatenated pieces, with invalid UTF-8 replaced by U+FFFD.
    fn decode_ids(&self, ids: &[TokenId]) -> String {
        let bytes: Vec<u8> = ids
            .iter()
            .filter_map(|&id| self.piece(id))
            .flatten()
            .copied()
            .collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Merge {
    pub left: TokenId,
    pub right: TokenId,
    pub result: TokenId,
}

#[derive(Debug, Clone)]
pub struct BpeModel {
    mode: BpeMode,
    requested_size: usize,
    alphabet: Vec<u32>,
    merges: Vec<Merge>,
    tokens: Vec<Vec<u8>>,
    ids: HashMap<Vec<u8>, TokenId>,
    ranks: HashMap<(TokenId, TokenId), usize>,
}

#[derive(Serialize, Deserialize)]
struct SpecialsFile {
    pad: TokenId,
    bos: TokenId,
    eos: TokenId,
    unk: TokenId,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    mode: BpeMode,
    requested_vocab_size: usize,
    specials: SpecialsFile,
    /// Codepoints (char mode) or byte values (byte mode), in id order.
    alphabet: Vec<u32>,
    merges: Vec<[TokenId; 2]>,
}

const MODEL_FORMAT: &str = "htrkit-bpe/1";

impl BpeModel {
    fn with_alphabet(mode: BpeMode, alphabet: Vec<u32>, requested_size: usize) -> Result<Self> {
        let mut model = BpeModel {
            mode,
            requested_size,
            alphabet: Vec::new(),
            merges: Vec::new(),
            tokens: vec![Vec::new(); NUM_SPECIALS],
            ids: HashMap::new(),
            ranks: HashMap::new(),
        };
        for v in alphabet {
            let bytes = match mode {
                BpeMode::Byte => {
                    let b = u8::try_from(v)
                        .map_err(|_| Error::InvalidTokenizer(format!("byte value {v} > 255")))?;
                    vec![b]
                }
                BpeMode::Char => char::from_u32(v)
                    .ok_or_else(|| Error::InvalidTokenizer(format!("bad codepoint {v:#x}")))?
                    .to_string()
                    .into_bytes(),
            };
            if model.ids.contains_key(&bytes) {
                return Err(Error::InvalidTokenizer(format!("duplicate alphabet entry {v:#x}")));
            }
            model.ids.insert(bytes.clone(), model.tokens.len() as TokenId);
            model.tokens.push(bytes);
            model.alphabet.push(v);
        }
        Ok(model)
    }

    /// Appends a merge; returns the id of the merged token (existing or new).
    fn push_merge(&mut self, left: TokenId, right: TokenId) -> Result<TokenId> {
        let (l, r) = (left as usize, right as usize);
        if l < NUM_SPECIALS || r < NUM_SPECIALS || l >= self.tokens.len() || r >= self.tokens.len() {
            return Err(Error::InvalidTokenizer(format!(
                "merge ({left}, {right}) references an unknown or special token"
            )));
        }
        let mut bytes = self.tokens[l].clone();
        bytes.extend_from_slice(&self.tokens[r]);
        let result = match self.ids.get(&bytes) {
            Some(&id) => id,
            None => {
                let id = self.tokens.len() as TokenId;
                self.ids.insert(bytes.clone(), id);
                self.tokens.push(bytes);
                id
            }
        };
        if self.ranks.insert((left, right), self.merges.len()).is_some() {
            return Err(Error::InvalidTokenizer(format!("duplicate merge ({left}, {right})")));
        }
        self.merges.push(Merge {
            left,
            right,
            result,
        });
        Ok(result)
    }

    pub fn mode(&self) -> BpeMode {
        self.mode
    }

    /// Number of ids in the vocabulary, specials included.
    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn requested_vocab_size(&self) -> usize {
        self.requested_size
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn alphabet_len(&self) -> usize {
        self.alphabet.len()
    }

    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(|t| t.as_slice())
    }

    pub fn token_id(&self, bytes: &[u8]) -> Option<TokenId> {
        self.ids.get(bytes).copied()
    }

    /// Human-readable token text (lossy for partial UTF-8 byte tokens).
    pub fn token_text(&self, id: TokenId) -> String {
        match id {
            PAD => "<pad>".into(),
            BOS => "<s>".into(),
            EOS => "</s>".into(),
            UNK => "<unk>".into(),
            _ => self
                .token_bytes(id)
                .map(|b| String::from_utf8_lossy(b).into_owned())
                .unwrap_or_default(),
        }
    }

    fn base_ids(&self, text: &str) -> Vec<TokenId> {
        match self.mode {
            BpeMode::Byte => text.bytes().map(|b| self.ids[&vec![b]]).collect(),
            BpeMode::Char => {
                let mut buf = [0u8; 4];
                text.chars()
                    .map(|c| {
                        let key = c.encode_utf8(&mut buf).as_bytes();
                        self.ids.get(key).copied().unwrap_or(UNK)
                    })
                    .collect()
            }
        }
    }

    /// Applies merges lowest-rank first until no ranked pair remains.
    fn apply_merges(&self, mut seq: Vec<TokenId>) -> Vec<TokenId> {
        loop {
            let best = seq
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).copied())
                .min();
            let Some(rank) = best else { return seq };
            let m = &self.merges[rank];
            seq = merge_pair(&seq, m.left, m.right, m.result);
        }
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.apply_merges(self.base_ids(text))
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        self.decode_ids(ids)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            mode: self.mode,
            requested_vocab_size: self.requested_size,
            specials: SpecialsFile {
                pad: PAD,
                bos: BOS,
                eos: EOS,
                unk: UNK,
            },
            alphabet: self.alphabet.clone(),
            merges: self.merges.iter().map(|m| [m.left, m.right]).collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::json("tokenizer model", e))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::InvalidTokenizer(format!(
                "unsupported format {:?}",
                file.format
            )));
        }
        let s = &file.specials;
        if (s.pad, s.bos, s.eos, s.unk) != (PAD, BOS, EOS, UNK) {
            return Err(Error::InvalidTokenizer("special ids must be 0..=3".into()));
        }
        let mut model = BpeModel::with_alphabet(file.mode, file.alphabet, file.requested_vocab_size)?;
        for [l, r] in file.merges {
            model.push_merge(l, r)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        BpeModel::from_json(&text)
    }
}

impl Vocabulary for BpeModel {
    fn piece(&self, id: TokenId) -> Option<&[u8]> {
        if (id as usize) < NUM_SPECIALS {
            return None;
        }
        self.token_bytes(id)
    }

    fn encode_text(&self, text: &str) -> Vec<TokenId> {
        self.encode(text)
    }
}

fn merge_pair(seq: &[TokenId], left: TokenId, right: TokenId, result: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == left && seq[i + 1] == right {
            out.push(result);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    out
}

/// Trains a BPE model on whole lines.
///
/// Merges are chosen greedily by descending pair frequency (counted over every
/// adjacent position, weighted by line multiplicity); ties go to the
/// lexicographically smallest `(left, right)` token byte strings. Training stops
/// when the vocabulary reaches `vocab_size` or no pair occurs at least twice.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], vocab_size: usize, mode: BpeMode) -> Result<BpeModel> {
    if corpus.iter().all(|l| l.as_ref().is_empty()) {
        return Err(Error::EmptyInput("tokenizer corpus"));
    }
    let alphabet: Vec<u32> = match mode {
        BpeMode::Byte => (0..=255).collect(),
        BpeMode::Char => corpus
            .iter()
            .flat_map(|l| l.as_ref().chars())
            .map(|c| c as u32)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let base = NUM_SPECIALS + alphabet.len();
    if vocab_size < base {
        return Err(Error::InvalidArgument(format!(
            "vocab size {vocab_size} is smaller than alphabet plus specials ({base})"
        )));
    }
    let mut model = BpeModel::with_alphabet(mode, alphabet, vocab_size)?;

    // Unique lines with multiplicities, in first-seen order.
    let mut line_index: HashMap<&str, usize> = HashMap::new();
    let mut lines: Vec<Vec<TokenId>> = Vec::new();
    let mut freq: Vec<i64> = Vec::new();
    for l in corpus {
        let l = l.as_ref();
        if l.is_empty() {
            continue;
        }
        match line_index.get(l) {
            Some(&i) => freq[i] += 1,
            None => {
                line_index.insert(l, lines.len());
                lines.push(model.base_ids(l));
                freq.push(1);
            }
        }
    }

    let mut counts: HashMap<(TokenId, TokenId), i64> = HashMap::new();
    let mut where_: HashMap<(TokenId, TokenId), BTreeSet<usize>> = HashMap::new();
    for (i, seq) in lines.iter().enumerate() {
        for w in seq.windows(2) {
            *counts.entry((w[0], w[1])).or_insert(0) += freq[i];
            where_.entry((w[0], w[1])).or_default().insert(i);
        }
    }

    while model.vocab_size() < vocab_size {
        let best = counts
            .iter()
            .filter(|(_, &c)| c >= 2)
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    // Smaller byte strings win ties, so reverse the comparison.
                    let ka = (&model.tokens[pa.0 as usize], &model.tokens[pa.1 as usize]);
                    let kb = (&model.tokens[pb.0 as usize], &model.tokens[pb.1 as usize]);
                    kb.cmp(&ka)
                })
            })
            .map(|(p, _)| *p);
        let Some((left, right)) = best else { break };
        let result = model.push_merge(left, right)?;

        let affected: Vec<usize> = where_
            .get(&(left, right))
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        for i in affected {
            let old = std::mem::take(&mut lines[i]);
            let new = merge_pair(&old, left, right, result);
            if new.len() == old.len() {
                lines[i] = old;
                continue;
            }
            for w in old.windows(2) {
                *counts.get_mut(&(w[0], w[1])).expect("counted pair") -= freq[i];
            }
            for w in new.windows(2) {
                *counts.entry((w[0], w[1])).or_insert(0) += freq[i];
                where_.entry((w[0], w[1])).or_default().insert(i);
            }
            lines[i] = new;
        }
        counts.retain(|_, c| *c > 0);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_text(model: &BpeModel, m: &Merge) -> (String, String) {
        (model.token_text(m.left), model.token_text(m.right))
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        // (a,b) occurs 4 times, (b,a) twice.
        let model = train_bpe(&["abab", "abab"], 7, BpeMode::Char).unwrap();
        assert_eq!(model.merges().len(), 1);
        assert_eq!(pair_text(&model, &model.merges()[0]), ("a".into(), "b".into()));
        assert_eq!(model.vocab_size(), 7);
    }

    #[test]
    fn boundary_size_gives_pure_character_model() {
        let model = train_bpe(&["abab", "abab"], 6, BpeMode::Char).unwrap();
        assert!(model.merges().is_empty());
        assert_eq!(model.encode("abab").len(), 4);
    }

    #[test]
    fn vocab_below_alphabet_is_rejected() {
        assert!(train_bpe(&["abc"], 6, BpeMode::Char).is_err());
        assert!(train_bpe(&["abc"], 259, BpeMode::Byte).is_err());
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(
            train_bpe::<&str>(&[], 10, BpeMode::Char),
            Err(Error::EmptyInput(_))
        ));
        assert!(train_bpe(&[""], 10, BpeMode::Char).is_err());
    }

    #[test]
    fn repeated_codepoint_chains_merges() {
        // aaaaaaaa -> aa×4 (pair count 7) -> aaaa×2 (pair count 3) -> aaaaaaaa (count 1: stop)
        let model = train_bpe(&["aaaaaaaa"], 100, BpeMode::Char).unwrap();
        let merges: Vec<_> = model.merges().iter().map(|m| pair_text(&model, m)).collect();
        assert_eq!(
            merges,
            vec![("a".into(), "a".into()), ("aa".into(), "aa".into())]
        );
        assert_eq!(model.vocab_size(), NUM_SPECIALS + 1 + 2);
    }

    #[test]
    fn ties_break_lexicographically() {
        // (a,b) and (c,d) both occur twice.
        let model = train_bpe(&["cdab", "abcd"], 9, BpeMode::Char).unwrap();
        assert_eq!(pair_text(&model, &model.merges()[0]), ("a".into(), "b".into()));
    }

    #[test]
    fn encode_applies_merges() {
        let model = train_bpe(&["abab", "abab"], 7, BpeMode::Char).unwrap();
        let ids = model.encode("abab");
        assert_eq!(ids.len(), 2);
        assert_eq!(ids[0], ids[1]);
        assert_eq!(model.decode(&ids), "abab");
    }

    #[test]
    fn char_mode_unknown_maps_to_unk() {
        let model = train_bpe(&["ab"], 6, BpeMode::Char).unwrap();
        let ids = model.encode("abc");
        assert_eq!(ids.len(), 3);
        assert_eq!(ids[2], UNK);
        assert_eq!(model.token_text(ids[0]), "a");
        assert_eq!(model.token_text(ids[1]), "b");
    }

    #[test]
    fn byte_mode_round_trip() {
        let model = train_bpe(&["कखग कखग", "कख"], 300, BpeMode::Byte).unwrap();
        for t in ["कखग", "", "hello wörld", "\u{0}\u{10FFFF}"] {
            assert_eq!(model.decode(&model.encode(t)), t);
        }
    }

    #[test]
    fn decode_edge_cases() {
        let model = train_bpe(&["ab"], 6, BpeMode::Char).unwrap();
        assert_eq!(model.decode(&[]), "");
        assert_eq!(model.decode(&[PAD, BOS, EOS, UNK]), "");
    }

    #[test]
    fn byte_mode_decode_repairs_invalid_utf8() {
        let model = train_bpe(&["x"], 260, BpeMode::Byte).unwrap();
        let ids = model.encode("क");
        assert_eq!(model.decode(&ids[..2]), "\u{FFFD}");
    }

    #[test]
    fn json_round_trip_preserves_encoding() {
        let corpus = ["नमस्ते संसार", "नमस्ते", "संसार संसार"];
        for mode in [BpeMode::Char, BpeMode::Byte] {
            let model = train_bpe(&corpus, 300, mode).unwrap();
            let again = BpeModel::from_json(&model.to_json()).unwrap();
            assert_eq!(again.merges(), model.merges());
            assert_eq!(again.vocab_size(), model.vocab_size());
            assert_eq!(again.encode(corpus[0]), model.encode(corpus[0]));
        }
    }

    #[test]
    fn from_json_rejects_bad_merges() {
        let model = train_bpe(&["ab"], 6, BpeMode::Char).unwrap();
        let json = model.to_json().replace("\"merges\": []", "\"merges\": [[4, 99]]");
        assert!(BpeModel::from_json(&json).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = ["कखग घङ", "कख गघ", "ङकख", "abc abc", "bca"];
        let a = train_bpe(&corpus, 300, BpeMode::Byte).unwrap();
        let b = train_bpe(&corpus, 300, BpeMode::Byte).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }
}
