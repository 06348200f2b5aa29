//! Run configuration for the end-to-end pipeline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SplitRatios;
use crate::decode::{default_grid, DecodeConfig, Strategy};
use crate::tokenizer::{BpeMode, DEFAULT_VOCAB_SIZE};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub ratios: SplitRatios,
    /// Split whole `group`s instead of lines.
    pub group_by_source: bool,
    /// Normalization rule file; the built-in rules when absent.
    pub rules: Option<PathBuf>,
    /// Text files with one transcription per line. Empty means a generated
    /// pseudo-Nepali corpus of `corpus_lines` lines.
    pub corpus: Vec<PathBuf>,
    pub corpus_lines: usize,
    /// Rendered images; defaults to one per corpus line.
    pub synth_count: Option<usize>,
    /// Augmented variants per train line.
    pub multiplicity: usize,
    /// Operator pool file; the 20-operator suite when absent.
    pub augment_pool: Option<PathBuf>,
    pub vocab_size: usize,
    pub bpe_mode: BpeMode,
    /// Leading-candidate error rate of the simulated replay distributions.
    pub replay_error_rate: f64,
    pub decode: DecodeConfig,
    /// Strategy sweep over the eval split; `None` uses the 27-entry grid.
    pub grid: Option<Vec<DecodeConfig>>,
    pub max_len: usize,
    pub threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            ratios: SplitRatios::default(),
            group_by_source: false,
            rules: None,
            corpus: Vec::new(),
            corpus_lines: 200,
            synth_count: None,
            multiplicity: 8,
            augment_pool: None,
            vocab_size: DEFAULT_VOCAB_SIZE,
            bpe_mode: BpeMode::Char,
            replay_error_rate: 0.1,
            decode: DecodeConfig::new(Strategy::Greedy),
            grid: None,
            max_len: 256,
            threshold: crate::analysis::DEFAULT_THRESHOLD,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::json("run config", e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        self.ratios.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.corpus.is_empty() && self.corpus_lines == 0 {
            return bad("corpus_lines must be positive when no corpus files are given".into());
        }
        if self.synth_count == Some(0) {
            return bad("synth_count must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.replay_error_rate) {
            return bad(format!("replay_error_rate {} outside [0, 1]", self.replay_error_rate));
        }
        if !(self.threshold.is_finite() && (0.0..=1.0).contains(&self.threshold)) {
            return bad(format!("threshold {} outside [0, 1]", self.threshold));
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".into());
        }
        self.decode.validate()?;
        for g in self.grid.iter().flatten() {
            g.validate()?;
        }
        Ok(())
    }

    pub fn decode_grid(&self) -> Vec<DecodeConfig> {
        self.grid.clone().unwrap_or_else(|| default_grid(self.max_len, self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(c.seed, 42);
        assert_eq!(c.vocab_size, 500);
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
        assert_eq!(c.decode_grid().len(), 27);
    }

    #[test]
    fn rejects_bad_fields() {
        assert!(RunConfig::from_json(r#"{"sed": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"ratios": {"train": 0.5, "eval": 0.1, "test": 0.1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"threshold": 2.0}"#).is_err());
        let partial = RunConfig::from_json(r#"{"seed": 7, "multiplicity": 2}"#).unwrap();
        assert_eq!((partial.seed, partial.multiplicity, partial.vocab_size), (7, 2, 500));
    }
}
