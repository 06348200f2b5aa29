//! The full data flow: synthesize, normalize, split, augment, train the
//! tokenizer, decode replayed distributions, score and analyze.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{split, split_sizes, stage_report, Manifest, RunConfig, Split};
use crate::analysis::{threshold_sweep, default_threshold_grid, uncertainty_scan, write_reports, AnalysisInputs};
use crate::augment::{expand_train_split, materialize_variants, read_pool, suite_pool};
use crate::decode::{decode, grid_to_csv, run_grid, DecodeResult, ReplaySet, Scorer, Strategy};
use crate::metrics::{align, evaluate, predictions_to_jsonl, rate, EvalOptions, Prediction, Rate};
use crate::rng::derive_seed;
use crate::synthgen::{builtin_atlases, load_corpus_text, normalize_corpus_text, synthesize_corpus, synthetic_text_lines, SynthOptions};
use crate::textnorm::{normalize_manifest, NormRuleSet};
use crate::tokenizer::{train_bpe, Vocabulary};
use crate::{Error, Result};

/// Worker-count variable. It sizes the thread pool only; outputs are the same
/// for every value.
pub const WORKERS_ENV: &str = "HTRKIT_WORKERS";

/// Runs `f` on a pool sized by [`WORKERS_ENV`] when set, else on the global pool.
pub fn with_workers<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{WORKERS_ENV}={v:?} is not a count")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub corpus_lines: usize,
    pub split_sizes: [usize; 3],
    pub augmented_records: usize,
    pub vocab_size: usize,
    pub test_mean_cer: Rate,
    pub test_weighted_cer: Rate,
    /// Relative artifact paths, sorted.
    pub artifacts: Vec<String>,
}

fn write(out: &Path, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
    let p = out.join(rel);
    if let Some(parent) = p.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
}

fn split_lines(m: &Manifest, s: Split) -> Vec<(String, String)> {
    m.iter()
        .filter(|r| r.split == Some(s) && r.is_original())
        .map(|r| (r.id.clone(), r.text.clone()))
        .collect()
}

/// Executes the whole pipeline into `out`, which must be empty or absent.
///
/// Artifacts: `config.json`, `corpus.txt`, `normalization.txt`,
/// `manifest.jsonl` (split), `augmented.jsonl`, `images/`, `stage_report.*`,
/// `tokenizer.json`, `replay.jsonl`, `predictions.jsonl`, `metrics.json`,
/// `per_line.csv`, `grid.csv`, `analysis/` and `artifacts.txt` with a SHA-256
/// of every other file.
pub fn run_end_to_end(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    if out.exists() && fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some() {
        return Err(Error::InvalidArgument(format!("output directory {} is not empty", out.display())));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(out, "config.json", cfg.to_json())?;

    let rules = match &cfg.rules {
        Some(p) => NormRuleSet::from_file(p)?,
        None => NormRuleSet::default(),
    };
    let lines = if cfg.corpus.is_empty() {
        let raw = synthetic_text_lines(cfg.corpus_lines, derive_seed(cfg.seed, &[0]));
        normalize_corpus_text(&raw.join("\n"), &rules)
    } else {
        load_corpus_text(&cfg.corpus, &rules)?
    };
    if lines.is_empty() {
        return Err(Error::EmptyInput("corpus"));
    }
    write(out, "corpus.txt", lines.join("\n") + "\n")?;

    let opts = SynthOptions {
        count: cfg.synth_count.unwrap_or(lines.len()),
        seed: derive_seed(cfg.seed, &[1]),
        image_dir: "images/synth".into(),
        ..SynthOptions::default()
    };
    let (synth, _) = synthesize_corpus(&lines, &builtin_atlases(), &opts, Some(out))?;
    let (normalized, norm_report) = normalize_manifest(&synth, &rules);
    write(out, "normalization.txt", norm_report.to_table())?;

    let tagged = split(&normalized, &cfg.ratios, cfg.seed, cfg.group_by_source)?;
    tagged.write_jsonl(out.join("manifest.jsonl"))?;

    let pool = match &cfg.augment_pool {
        Some(p) => read_pool(p)?,
        None => suite_pool(),
    };
    let augmented = expand_train_split(&tagged, cfg.multiplicity, &pool, derive_seed(cfg.seed, &[2]))?;
    let leaks = augmented.audit_leakage();
    if !leaks.is_empty() {
        return Err(Error::InvalidManifest(format!("split leakage in {} variants", leaks.len())));
    }
    materialize_variants(&augmented, out)?;
    augmented.write_jsonl(out.join("augmented.jsonl"))?;
    let report = stage_report([&augmented]);
    write(out, "stage_report.txt", report.to_table())?;
    write(out, "stage_report.csv", report.to_csv())?;

    let texts: Vec<&str> = tagged.iter().map(|r| r.text.as_str()).collect();
    let vocab = train_bpe(&texts, cfg.vocab_size, cfg.bpe_mode)?;
    vocab.save(out.join("tokenizer.json"))?;

    let eval = split_lines(&tagged, Split::Eval);
    let test = split_lines(&tagged, Split::Test);
    let both: Vec<(String, String)> = eval.iter().chain(&test).cloned().collect();
    let replay = ReplaySet::simulate(
        &both,
        &vocab,
        vocab.vocab_size(),
        cfg.replay_error_rate,
        derive_seed(cfg.seed, &[3]),
    )?;
    replay.save(out.join("replay.jsonl"))?;
    let scorer_for = |id: &str| {
        replay
            .scorer(id)
            .ok_or_else(|| Error::InvalidArgument(format!("no replay distributions for {id}")))
    };

    let decoded: Vec<(String, String, DecodeResult)> = test
        .par_iter()
        .enumerate()
        .map(|(i, (id, reference))| {
            let c = cfg.decode.with_seed(derive_seed(cfg.decode.seed, &[i as u64]));
            Ok((id.clone(), reference.clone(), decode(&scorer_for(id)?, &c)?))
        })
        .collect::<Result<_>>()?;
    let predictions: Vec<Prediction> = decoded
        .iter()
        .map(|(id, reference, r)| Prediction {
            id: id.clone(),
            reference: reference.clone(),
            hypothesis: vocab.decode_ids(&r.content_tokens()),
        })
        .collect();
    write(out, "predictions.jsonl", predictions_to_jsonl(&predictions))?;
    let summary = if predictions.is_empty() {
        None
    } else {
        let s = evaluate(&predictions, &EvalOptions::default())?;
        write(out, "metrics.json", s.to_json())?;
        write(out, "per_line.csv", s.to_csv())?;
        Some(s)
    };

    if !eval.is_empty() {
        // replayed distributions carry no hidden states, so contrastive
        // entries are listed as skipped rather than run
        let has_reps = scorer_for(&eval[0].0)?.representation(&[], 0).is_some();
        let (grid, skipped): (Vec<_>, Vec<_>) = cfg
            .decode_grid()
            .into_iter()
            .partition(|c| has_reps || !matches!(c.strategy, Strategy::Contrastive { .. }));
        let rows = run_grid(|_, id| scorer_for(id), &eval, &grid, &vocab)?;
        write(out, "grid.csv", grid_to_csv(&rows))?;
        if !skipped.is_empty() {
            let text: String = skipped
                .iter()
                .map(|c| format!("{} {} (scorer has no token representations)\n", c.strategy.name(), c.strategy.params()))
                .collect();
            write(out, "grid_skipped.txt", text)?;
        }
    }

    let alignments: Vec<_> = predictions
        .iter()
        .map(|p| (p.id.clone(), align(&p.reference, &p.hypothesis)))
        .collect();
    let unc = uncertainty_scan(&decoded, &vocab, cfg.threshold);
    let sweep = if unc.records.is_empty() {
        None
    } else {
        Some(threshold_sweep(&unc.records, &default_threshold_grid())?)
    };
    write_reports(
        &out.join("analysis"),
        &AnalysisInputs {
            alignments: &alignments,
            uncertainty: Some(&unc),
            sweep: sweep.as_ref(),
            histogram_width: rate(1, 20),
            length_edges: vec![0, 20, 40, 60, 80, 100, 120],
        },
    )?;

    let artifacts = list_files(out)?;
    let mut digest = String::new();
    for rel in &artifacts {
        let bytes = fs::read(out.join(rel)).map_err(|e| Error::io(out.join(rel), e))?;
        let _ = writeln!(digest, "{}  {rel}", hex::encode(Sha256::digest(&bytes)));
    }
    write(out, "artifacts.txt", digest)?;

    Ok(RunSummary {
        corpus_lines: lines.len(),
        split_sizes: split_sizes(&tagged),
        augmented_records: augmented.len(),
        vocab_size: vocab.vocab_size(),
        test_mean_cer: summary.as_ref().map_or_else(|| rate(0, 1), |s| s.mean_cer.clone()),
        test_weighted_cer: summary.map_or_else(|| rate(0, 1), |s| s.weighted_cer),
        artifacts: {
            let mut a = artifacts;
            a.push("artifacts.txt".into());
            a.sort();
            a
        },
    })
}

/// Every file below `root` as a `/`-separated relative path, sorted.
pub fn list_files(root: &Path) -> Result<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path: PathBuf = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("below root");
                out.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort();
    Ok(out)
}
