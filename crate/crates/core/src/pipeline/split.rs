//! Seeded train/eval/test assignment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Manifest, Split};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub eval: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            eval: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, eval: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, eval, test };
        r.validate()?;
        Ok(r)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.eval, self.test]
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if a.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidConfig(format!("split ratios must be non-negative: {a:?}")));
        }
        let sum: f64 = a.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("split ratios sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Largest-remainder apportionment of `n` items. Leftover items go to the
    /// largest fractional parts, earlier splits first on ties.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let quotas: Vec<f64> = self
            .as_array()
            .iter()
            .map(|r| {
                let q = n as f64 * r;
                // 3100 * 0.1 is 310.00000000000006 in binary floating point
                if (q - q.round()).abs() < 1e-9 {
                    q.round()
                } else {
                    q
                }
            })
            .collect();
        let mut out = [0usize; 3];
        for (o, q) in out.iter_mut().zip(&quotas) {
            *o = q.floor() as usize;
        }
        let assigned: usize = out.iter().sum();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
        });
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            out[i] += 1;
        }
        out
    }
}

/// Tags every original record with a split and copies the tag onto augmented
/// variants from their source record.
///
/// Originals are shuffled with a PRNG seeded by `seed` and cut at the
/// [`SplitRatios::counts`] boundaries. With `by_group`, whole groups (the
/// record's `group`, else its id) are shuffled instead, and each group lands in
/// the split where its first line falls, so sizes only approximate the ratios.
pub fn split(manifest: &Manifest, ratios: &SplitRatios, seed: u64, by_group: bool) -> Result<Manifest> {
    ratios.validate()?;
    manifest.validate()?;
    let originals: Vec<usize> = (0..manifest.len())
        .filter(|&i| manifest.records[i].is_original())
        .collect();
    let mut rng = Rng::new(seed);
    let counts = ratios.counts(originals.len());
    let bounds = [counts[0], counts[0] + counts[1]];
    let which = |pos: usize| {
        if pos < bounds[0] {
            Split::Train
        } else if pos < bounds[1] {
            Split::Eval
        } else {
            Split::Test
        }
    };
    let mut tag: BTreeMap<usize, Split> = BTreeMap::new();
    if by_group {
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        for &i in &originals {
            let r = &manifest.records[i];
            let key = r.group.clone().unwrap_or_else(|| r.id.clone());
            match index.get(&key) {
                Some(&g) => groups[g].1.push(i),
                None => {
                    index.insert(key.clone(), groups.len());
                    groups.push((key, vec![i]));
                }
            }
        }
        rng.shuffle(&mut groups);
        let mut pos = 0;
        for (_, members) in &groups {
            let s = which(pos);
            for &i in members {
                tag.insert(i, s);
            }
            pos += members.len();
        }
    } else {
        let mut order = originals.clone();
        rng.shuffle(&mut order);
        for (pos, &i) in order.iter().enumerate() {
            tag.insert(i, which(pos));
        }
    }
    let by_id: BTreeMap<&str, usize> = manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let mut out = manifest.clone();
    for (i, rec) in out.records.iter_mut().enumerate() {
        rec.split = Some(match tag.get(&i) {
            Some(s) => *s,
            None => {
                let src = by_id
                    .get(rec.provenance.source_id.as_str())
                    .and_then(|j| tag.get(j))
                    .ok_or_else(|| {
                        Error::InvalidManifest(format!(
                            "variant {} has no original source {} in the manifest",
                            rec.id, rec.provenance.source_id
                        ))
                    })?;
                *src
            }
        });
    }
    Ok(out)
}

/// Number of records per split, in train/eval/test order.
pub fn split_sizes(manifest: &Manifest) -> [usize; 3] {
    let mut out = [0; 3];
    for r in manifest.iter() {
        if let Some(s) = r.split {
            out[Split::ALL.iter().position(|x| *x == s).expect("known split")] += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Record;

    fn lines(n: usize) -> Manifest {
        (0..n).map(|i| Record::new(format!("l{i}"), format!("l{i}.png"), "x")).collect()
    }

    #[test]
    fn apportionment() {
        let r = SplitRatios::default();
        assert_eq!(r.counts(3100), [2480, 310, 310]);
        assert_eq!(r.counts(10), [8, 1, 1]);
        assert_eq!(r.counts(0), [0, 0, 0]);
        assert_eq!(r.counts(5139), [4111, 514, 514]);
        assert_eq!(r.counts(1), [1, 0, 0]);
        assert!(SplitRatios::new(0.8, 0.1, 0.2).is_err());
        assert!(SplitRatios::new(1.2, -0.1, -0.1).is_err());
    }

    #[test]
    fn split_is_seeded() {
        let m = lines(50);
        let a = split(&m, &SplitRatios::default(), 42, false).unwrap();
        let b = split(&m, &SplitRatios::default(), 42, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(split_sizes(&a), [40, 5, 5]);
        let c = split(&m, &SplitRatios::default(), 7, false).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn groups_stay_together() {
        let mut m = lines(40);
        for (i, r) in m.records.iter_mut().enumerate() {
            r.group = Some(format!("ms{}", i / 4));
        }
        let s = split(&m, &SplitRatios::default(), 3, true).unwrap();
        let mut by_group: BTreeMap<String, Split> = BTreeMap::new();
        for r in s.iter() {
            let g = r.group.clone().unwrap();
            assert_eq!(*by_group.entry(g).or_insert(r.split.unwrap()), r.split.unwrap());
        }
        assert_eq!(split_sizes(&s).iter().sum::<usize>(), 40);
    }

    #[test]
    fn variants_follow_source() {
        let m = lines(20);
        let aug = crate::augment::expand_dataset(&m, 2, &crate::augment::suite_pool(), 1).unwrap();
        let s = split(&aug, &SplitRatios::default(), 42, false).unwrap();
        assert!(s.audit_leakage().is_empty());
        assert_eq!(split_sizes(&s), [48, 6, 6]);
        let mut orphan = aug.clone();
        orphan.records.remove(0);
        assert!(split(&orphan, &SplitRatios::default(), 42, false).is_err());
    }
}
