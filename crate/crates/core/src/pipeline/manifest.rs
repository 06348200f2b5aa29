//! JSONL dataset manifests: one line record per image/transcription pair.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::augment::AugSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Eval, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" | "validation" | "val" => Ok(Split::Eval),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// How a record's image came to be.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Augmentation {
    #[default]
    Original,
    Applied(AugSpec),
}

impl Serialize for Augmentation {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Augmentation::Original => serializer.serialize_str("original"),
            Augmentation::Applied(spec) => spec.serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for Augmentation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        match value {
            serde_json::Value::String(s) if s == "original" => Ok(Augmentation::Original),
            other => serde_json::from_value(other)
                .map(Augmentation::Applied)
                .map_err(serde::de::Error::custom),
        }
    }
}

/// Render parameters of a synthetic image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthInfo {
    pub atlas: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    #[serde(default)]
    pub augmentation: Augmentation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthInfo>,
}

impl Provenance {
    pub fn original(source_id: impl Into<String>) -> Self {
        Provenance {
            source_id: source_id.into(),
            augmentation: Augmentation::Original,
            synth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    /// Image path, relative to the manifest's image root.
    pub image: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default = "default_stage")]
    pub stage: u8,
    /// Source document (manuscript) for grouped splitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub provenance: Provenance,
}

fn default_stage() -> u8 {
    3
}

impl Record {
    pub fn new(id: impl Into<String>, image: impl Into<String>, text: impl Into<String>) -> Self {
        let id = id.into();
        Record {
            provenance: Provenance::original(id.clone()),
            id,
            image: image.into(),
            text: text.into(),
            split: None,
            stage: default_stage(),
            group: None,
        }
    }

    pub fn is_original(&self) -> bool {
        matches!(self.provenance.augmentation, Augmentation::Original)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn new(records: Vec<Record>) -> Self {
        Manifest { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Record> {
        self.records.iter()
    }

    /// Ids must be unique and stages in 1..=3.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::InvalidManifest(format!("duplicate id {:?}", r.id)));
            }
            if !(1..=3).contains(&r.stage) {
                return Err(Error::InvalidManifest(format!(
                    "record {:?}: stage {} outside 1..=3",
                    r.id, r.stage
                )));
            }
        }
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line)
                .map_err(|e| Error::json(format!("{}:{}", path.display(), n + 1), e))?;
            records.push(record);
        }
        let manifest = Manifest { records };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Records whose split differs from their source record's split.
    ///
    /// Returns the ids of leaking variants; an empty result means the manifest
    /// has no split leakage. Variants whose source is absent are reported too.
    pub fn audit_leakage(&self) -> Vec<String> {
        let by_id: std::collections::BTreeMap<&str, &Record> =
            self.records.iter().map(|r| (r.id.as_str(), r)).collect();
        self.records
            .iter()
            .filter(|r| !r.is_original())
            .filter(|r| match by_id.get(r.provenance.source_id.as_str()) {
                Some(src) => src.split != r.split || r.split.is_none(),
                None => true,
            })
            .map(|r| r.id.clone())
            .collect()
    }
}

impl FromIterator<Record> for Manifest {
    fn from_iter<I: IntoIterator<Item = Record>>(iter: I) -> Self {
        Manifest {
            records: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn original_provenance_serializes_as_string() {
        let r = Record::new("a", "a.png", "क");
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains(r#""augmentation":"original""#), "{json}");
        let back: Record = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let m = Manifest::new(vec![Record::new("a", "x", "1"), Record::new("a", "y", "2")]);
        assert!(matches!(m.validate(), Err(Error::InvalidManifest(_))));
    }

    #[test]
    fn split_parses_aliases() {
        assert_eq!("validation".parse::<Split>().unwrap(), Split::Eval);
        assert!("dev2".parse::<Split>().is_err());
    }
}
