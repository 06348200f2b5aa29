use std::path::Path;
use std::process::{Command, Output};

use htrkit::imaging::GrayImage;
use htrkit::pipeline::{Manifest, Record, Split};

fn htrkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_htrkit")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = htrkit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(n: usize, split: Option<Split>) -> Manifest {
    (0..n)
        .map(|i| {
            let mut r = Record::new(format!("l{i:04}"), format!("img/l{i:04}.png"), "क");
            r.split = split;
            r
        })
        .collect()
}

#[test]
fn score_reproduces_metric_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("p.jsonl");
    std::fs::write(
        &preds,
        concat!(
            r#"{"id":"a","reference":"abcd","hypothesis":"abxd"}"#, "\n",
            r#"{"id":"b","reference":"x","hypothesis":"x"}"#, "\n",
            r#"{"id":"c","reference":"a","hypothesis":"abc"}"#, "\n",
        ),
    )
    .unwrap();
    let out = ok(&["score", p(&preds)]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // per line 1/4, 0, 2: mean 3/4; weighted (1 + 0 + 2) / (4 + 1 + 1)
    assert_eq!(v["mean_cer"]["exact"], "3/4");
    assert_eq!(v["weighted_cer"]["exact"], "1/2");
    assert_eq!(v["exact_match_accuracy"]["exact"], "1/3");

    std::fs::write(&preds, "{\"id\":\"z\",\"reference\":\"क\u{200B}ख\",\"hypothesis\":\"कख\"}\n").unwrap();
    let v: serde_json::Value = serde_json::from_slice(&ok(&["score", p(&preds)]).stdout).unwrap();
    assert_eq!(v["exact_match_accuracy"]["exact"], "1/1");
}

#[test]
fn split_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.jsonl");
    manifest(3100, None).write_jsonl(&m).unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    ok(&["split", p(&m), "-o", p(&a), "--seed", "42"]);
    ok(&["split", p(&m), "-o", p(&b), "--seed", "42"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let s = Manifest::read_jsonl(&a).unwrap();
    assert_eq!(htrkit::pipeline::split_sizes(&s), [2480, 310, 310]);
}

#[test]
fn augment_multiplicity_two() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.jsonl");
    let out = dir.path().join("aug.jsonl");
    manifest(2480, Some(Split::Train)).write_jsonl(&m).unwrap();
    ok(&["augment", p(&m), "-o", p(&out), "--multiplicity", "2"]);
    let a = Manifest::read_jsonl(&out).unwrap();
    assert_eq!(a.len(), 7440);
    ok(&["audit", p(&out)]);
    // multiplicities outside the supported set are rejected as invalid input
    assert_eq!(htrkit(&["augment", p(&m), "-o", p(&out), "--multiplicity", "3"]).status.code(), Some(1));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    assert_eq!(htrkit(&["score", p(&missing)]).status.code(), Some(2));
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{not json\n").unwrap();
    assert_eq!(htrkit(&["score", p(&bad)]).status.code(), Some(1));
    assert_eq!(htrkit(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(htrkit(&["--help"]).status.code(), Some(0));

    let mut leaky = manifest(4, Some(Split::Train));
    let mut v = leaky.records[0].clone();
    v.id = "l0000~aug01".into();
    v.split = Some(Split::Test);
    v.provenance.augmentation = htrkit::pipeline::Augmentation::Applied(htrkit::augment::suite_pool()[0].clone());
    leaky.records.push(v);
    let path = dir.path().join("leaky.jsonl");
    leaky.write_jsonl(&path).unwrap();
    let out = htrkit(&["audit", p(&path)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("l0000~aug01"));
}

#[test]
fn binarize_writes_two_levels() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("in.png");
    let dst = dir.path().join("out.png");
    GrayImage::from_fn(40, 20, |x, y| if (x + y) % 7 < 2 { 30 + (x % 5) as u8 } else { 200 + (y % 9) as u8 })
        .unwrap()
        .save(&src)
        .unwrap();
    ok(&["binarize", p(&src), "-o", p(&dst)]);
    let img = GrayImage::load(&dst).unwrap();
    assert!(img.pixels().iter().all(|&v| v == 0 || v == 255));
    assert!(img.pixels().contains(&0) && img.pixels().contains(&255));
}

#[test]
fn tokenizer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    std::fs::write(&corpus, "कखग कखग\nकख गघ\nकखग\n").unwrap();
    let model = dir.path().join("tok.json");
    ok(&["train-tokenizer", p(&corpus), "-o", p(&model), "--vocab-size", "20"]);
    let ids = dir.path().join("ids.txt");
    let back = dir.path().join("back.txt");
    ok(&["tokenize", "--model", p(&model), p(&corpus), "-o", p(&ids)]);
    ok(&["tokenize", "--model", p(&model), "--decode", p(&ids), "-o", p(&back)]);
    assert_eq!(std::fs::read_to_string(&back).unwrap(), std::fs::read_to_string(&corpus).unwrap());
}

#[test]
fn decode_toy_scorer() {
    let dir = tempfile::tempdir().unwrap();
    let scorer = dir.path().join("toy.json");
    std::fs::write(
        &scorer,
        r#"{"vocab":["EOS","A","B"],"eos":"EOS","transitions":{
            "<start>":{"A":0.5,"B":0.45,"EOS":0.05},
            "A":{"EOS":0.4,"A":0.3,"B":0.3},
            "B":{"EOS":0.9,"A":0.05,"B":0.05}}}"#,
    )
    .unwrap();
    let g: serde_json::Value = serde_json::from_slice(&ok(&["decode", "--scorer", p(&scorer)]).stdout).unwrap();
    assert_eq!(g["text"], "A EOS");
    let b: serde_json::Value =
        serde_json::from_slice(&ok(&["decode", "--scorer", p(&scorer), "--strategy", "beam", "--width", "2"]).stdout).unwrap();
    assert_eq!(b["text"], "B EOS");
    // no embeddings in the table, so contrastive search is refused
    assert_eq!(htrkit(&["decode", "--scorer", p(&scorer), "--strategy", "contrastive"]).status.code(), Some(1));
}

#[test]
fn run_output_ignores_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"corpus_lines": 30, "multiplicity": 2, "vocab_size": 100}"#).unwrap();
    let digests: Vec<String> = ["1", "4"]
        .iter()
        .map(|w| {
            let out = dir.path().join(format!("run{w}"));
            let o = Command::new(env!("CARGO_BIN_EXE_htrkit"))
                .args(["run", "--config", p(&cfg), "--out-dir", p(&out)])
                .env("HTRKIT_WORKERS", w)
                .output()
                .unwrap();
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            std::fs::read_to_string(out.join("artifacts.txt")).unwrap()
        })
        .collect();
    assert_eq!(digests[0], digests[1]);
    assert!(digests[0].contains("analysis/summary.json"));

    let again = dir.path().join("run1");
    assert_eq!(
        htrkit(&["run", "--config", p(&cfg), "--out-dir", p(&again)]).status.code(),
        Some(1),
        "non-empty output directory is refused"
    );
}

#[test]
fn stage_report_and_normalize() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.jsonl");
    manifest(10, Some(Split::Eval)).write_jsonl(&m).unwrap();
    let out = ok(&["stage-report", p(&m), "--csv"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("total,0,10,0,0"));

    let text = dir.path().join("t.txt");
    let norm = dir.path().join("n.txt");
    std::fs::write(&text, "क|ख 12\n").unwrap();
    ok(&["normalize", p(&text), "-o", p(&norm)]);
    assert_eq!(std::fs::read_to_string(&norm).unwrap(), "क।ख १२\n");
}
