//! Per-stage, per-split record counts in the three-stage training layout.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Manifest, Record, Split};

pub const STAGE_NAMES: [(u8, &str); 3] = [
    (1, "First Stage: Pre-training"),
    (2, "Second Stage: Transfer Learning"),
    (3, "Third Stage: Final Model Training"),
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageReport {
    /// stage → [train, eval, test, untagged]
    pub counts: BTreeMap<u8, [u64; 4]>,
}

fn column(split: Option<Split>) -> usize {
    match split {
        Some(Split::Train) => 0,
        Some(Split::Eval) => 1,
        Some(Split::Test) => 2,
        None => 3,
    }
}

impl StageReport {
    pub fn add(&mut self, stage: u8, split: Option<Split>, n: u64) {
        self.counts.entry(stage).or_default()[column(split)] += n;
    }

    pub fn add_record(&mut self, r: &Record) {
        self.add(r.stage, r.split, 1);
    }

    pub fn row(&self, stage: u8) -> [u64; 4] {
        self.counts.get(&stage).copied().unwrap_or_default()
    }

    pub fn totals(&self) -> [u64; 4] {
        let mut t = [0; 4];
        for row in self.counts.values() {
            for (a, b) in t.iter_mut().zip(row) {
                *a += b;
            }
        }
        t
    }

    /// Plain-text table; the untagged column appears only when non-zero.
    pub fn to_table(&self) -> String {
        let untagged = self.totals()[3] > 0;
        let mut stages: Vec<(u8, String)> = STAGE_NAMES.iter().map(|(s, n)| (*s, n.to_string())).collect();
        for s in self.counts.keys() {
            if !stages.iter().any(|(x, _)| x == s) {
                stages.push((*s, format!("Stage {s}")));
            }
        }
        let width = stages.iter().map(|(_, n)| n.len()).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = write!(out, "{:width$}  {:>9}  {:>9}  {:>9}", "", "Train", "Eval", "Test");
        if untagged {
            let _ = write!(out, "  {:>9}", "Untagged");
        }
        out.push('\n');
        let mut line = |name: &str, row: [u64; 4]| {
            let _ = write!(
                out,
                "{name:width$}  {:>9}  {:>9}  {:>9}",
                thousands(row[0]),
                thousands(row[1]),
                thousands(row[2])
            );
            if untagged {
                let _ = write!(out, "  {:>9}", thousands(row[3]));
            }
            out.push('\n');
        };
        for (s, name) in &stages {
            line(name, self.row(*s));
        }
        line("Total", self.totals());
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,train,eval,test,untagged\n");
        for (s, r) in &self.counts {
            let _ = writeln!(out, "{s},{},{},{},{}", r[0], r[1], r[2], r[3]);
        }
        let t = self.totals();
        let _ = writeln!(out, "total,{},{},{},{}", t[0], t[1], t[2], t[3]);
        out
    }
}

pub fn stage_report<'a>(manifests: impl IntoIterator<Item = &'a Manifest>) -> StageReport {
    let mut r = StageReport::default();
    for m in manifests {
        for rec in m.iter() {
            r.add_record(rec);
        }
    }
    r
}

fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}
