use htrkit::pipeline::{list_files, run_end_to_end, Manifest, RunConfig, Split};

fn small() -> RunConfig {
    RunConfig {
        corpus_lines: 40,
        multiplicity: 2,
        vocab_size: 120,
        ..RunConfig::default()
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = run_end_to_end(&small(), a.path()).unwrap();
    let sb = run_end_to_end(&small(), b.path()).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(sa.split_sizes, [32, 4, 4]);
    assert_eq!(sa.augmented_records, 40 + 32 * 2);
    let files = list_files(a.path()).unwrap();
    assert_eq!(files, list_files(b.path()).unwrap());
    for f in &files {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
    for needed in ["metrics.json", "grid.csv", "analysis/summary.json", "analysis/heatmap.png", "tokenizer.json"] {
        assert!(files.iter().any(|f| f == needed), "missing {needed}");
    }
}

#[test]
fn variants_stay_in_train() {
    let dir = tempfile::tempdir().unwrap();
    run_end_to_end(&small(), dir.path()).unwrap();
    let m = Manifest::read_jsonl(dir.path().join("augmented.jsonl")).unwrap();
    assert!(m.audit_leakage().is_empty());
    assert!(m.iter().filter(|r| !r.is_original()).all(|r| r.split == Some(Split::Train)));
    for r in m.iter() {
        assert!(dir.path().join(&r.image).is_file(), "{}", r.image);
    }
}

#[test]
fn refuses_non_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("x"), "").unwrap();
    assert!(run_end_to_end(&small(), dir.path()).is_err());
}
