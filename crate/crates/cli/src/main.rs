//! `htrkit` command line. Exit status: 0 on success, 1 on invalid input or
//! arguments, 2 on I/O failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use htrkit::analysis::{default_threshold_grid, threshold_sweep, uncertainty_scan, write_reports, AnalysisInputs};
use htrkit::augment::{expand_dataset, expand_train_split, materialize_variants, read_pool, suite_pool};
use htrkit::decode::{decode, grid_to_csv, default_grid, run_grid, DecodeConfig, DecodeResult, MarkovScorer, ReplaySet, Strategy};
use htrkit::imaging::{binarize, otsu_threshold, GrayImage};
use htrkit::metrics::{align, evaluate, rate, read_predictions, EmptyReferencePolicy, EvalOptions, Prediction};
use htrkit::pipeline::{run_end_to_end, split, split_sizes, stage_report, with_workers, Manifest, RunConfig, Split, SplitRatios};
use htrkit::synthgen::{builtin_atlases, load_corpus_text, synthesize_corpus, GlyphAtlas, SynthOptions};
use htrkit::textnorm::{normalize_manifest, NormReport, NormRuleSet, normalize_line};
use htrkit::tokenizer::{train_bpe, BpeMode, BpeModel, TokenId, Vocabulary, DEFAULT_VOCAB_SIZE};
use htrkit::{Error, Result};

#[derive(Parser)]
#[command(name = "htrkit", version, about = "Data preparation, decoding and evaluation for Devanagari HTR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize transcriptions in a manifest (.jsonl) or a plain text file.
    Normalize(NormalizeArgs),
    /// Assign train/eval/test splits with a seeded shuffle.
    Split(SplitArgs),
    /// Render and degrade synthetic line images.
    Synth(SynthArgs),
    /// Add augmented variants to a manifest.
    Augment(AugmentArgs),
    /// Train a BPE tokenizer.
    TrainTokenizer(TrainTokenizerArgs),
    /// Encode text lines to token ids, or ids back to text.
    Tokenize(TokenizeArgs),
    /// CER metrics over a predictions JSONL file.
    Score(ScoreArgs),
    /// Decode with a Markov or replay scorer.
    Decode(DecodeArgs),
    /// Sweep decoding strategies over replayed distributions.
    Grid(GridArgs),
    /// Confusion, error-share, CER and uncertainty reports.
    Analyze(AnalyzeArgs),
    /// Otsu (or fixed-threshold) binarization of an image.
    Binarize(BinarizeArgs),
    /// Check that augmented variants share their source's split.
    Audit(AuditArgs),
    /// Record counts per training stage and split.
    StageReport(StageReportArgs),
    /// The full pipeline from corpus to analysis.
    Run(RunArgs),
}

#[derive(Args)]
struct NormalizeArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Rule file; the built-in rules otherwise.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Write the per-rule report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    manifest: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// train,eval,test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    ratios: String,
    /// Keep records sharing a `group` in one split.
    #[arg(long)]
    by_group: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Text files, one transcription per line.
    #[arg(required = true)]
    corpus: Vec<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output root; images go below it and the manifest to <out>/manifest.jsonl.
    #[arg(long)]
    out: PathBuf,
    /// Atlas files; the three built-in styles otherwise.
    #[arg(long)]
    atlas: Vec<PathBuf>,
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Render clean images without the noise pipeline.
    #[arg(long)]
    clean: bool,
    #[arg(long, default_value_t = 1)]
    stage: u8,
}

#[derive(Args)]
struct AugmentArgs {
    manifest: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Variants per line.
    #[arg(long, value_parser = ["2", "4", "8", "12", "16"])]
    multiplicity: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Operator pool JSON; the 20-operator suite otherwise.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Augment every split, not only train.
    #[arg(long)]
    all_splits: bool,
    /// Write variant images below this root (sources are read from it too).
    #[arg(long)]
    images: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Char,
    Byte,
}

impl From<ModeArg> for BpeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Char => BpeMode::Char,
            ModeArg::Byte => BpeMode::Byte,
        }
    }
}

#[derive(Args)]
struct TrainTokenizerArgs {
    /// Text files or manifests (.jsonl); all are concatenated.
    #[arg(required = true)]
    corpus: Vec<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    vocab_size: usize,
    #[arg(long, value_enum, default_value = "char")]
    mode: ModeArg,
}

#[derive(Args)]
struct TokenizeArgs {
    #[arg(long)]
    model: PathBuf,
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Input holds space-separated ids; write text.
    #[arg(long)]
    decode: bool,
}

#[derive(Args)]
struct ScoreArgs {
    predictions: PathBuf,
    /// Summary JSON path; stdout otherwise.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Per-line CSV path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Fail on empty references instead of skipping them.
    #[arg(long)]
    strict: bool,
    /// Keep zero-width characters when aligning.
    #[arg(long)]
    keep_zero_width: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Greedy,
    Beam,
    Contrastive,
    Temperature,
    TopK,
    TopP,
}

#[derive(Args, Clone)]
struct StrategyArgs {
    #[arg(long, value_enum, default_value = "greedy")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 5)]
    width: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0.6)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.9)]
    p: f64,
    #[arg(long, default_value_t = 256)]
    max_len: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl StrategyArgs {
    fn config(&self) -> Result<DecodeConfig> {
        let strategy = match self.strategy {
            StrategyArg::Greedy => Strategy::Greedy,
            StrategyArg::Beam => Strategy::Beam { width: self.width },
            StrategyArg::Contrastive => Strategy::Contrastive { k: self.k, alpha: self.alpha },
            StrategyArg::Temperature => Strategy::Temperature { tau: self.tau },
            StrategyArg::TopK => Strategy::TopK { k: self.k },
            StrategyArg::TopP => Strategy::TopP { p: self.p },
        };
        let c = DecodeConfig::new(strategy).with_max_len(self.max_len).with_seed(self.seed);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct DecodeArgs {
    /// Markov scorer JSON.
    #[arg(long, conflicts_with = "replay", required_unless_present = "replay")]
    scorer: Option<PathBuf>,
    /// Replay JSONL; every line id is decoded.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Tokenizer for rendering replay output as text.
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    #[command(flatten)]
    strategy: StrategyArgs,
    /// JSONL output; stdout otherwise.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    replay: PathBuf,
    /// Manifest holding the reference transcriptions.
    #[arg(long)]
    references: PathBuf,
    #[arg(long)]
    tokenizer: PathBuf,
    /// Split whose lines are decoded.
    #[arg(long, default_value = "eval")]
    split: String,
    /// JSON list of decode configs; the 27-entry grid otherwise.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    max_len: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    predictions: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Replay JSONL for token-level uncertainty (needs --tokenizer).
    #[arg(long, requires = "tokenizer")]
    replay: Option<PathBuf>,
    #[arg(long)]
    tokenizer: Option<PathBuf>,
    #[arg(long, default_value_t = htrkit::analysis::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Histogram bin width as a fraction, e.g. 1/20.
    #[arg(long, default_value = "1/20")]
    bin_width: String,
    /// Line-length bin edges.
    #[arg(long, default_value = "0,20,40,60,80,100,120", value_delimiter = ',')]
    length_edges: Vec<u64>,
}

#[derive(Args)]
struct BinarizeArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Fixed threshold instead of Otsu's.
    #[arg(long)]
    threshold: Option<u8>,
}

#[derive(Args)]
struct AuditArgs {
    manifest: PathBuf,
}

#[derive(Args)]
struct StageReportArgs {
    #[arg(required = true)]
    manifests: Vec<PathBuf>,
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    corpus_lines: Option<usize>,
    #[arg(long)]
    multiplicity: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_rules(path: &Option<PathBuf>) -> Result<NormRuleSet> {
    match path {
        Some(p) => NormRuleSet::from_file(p),
        None => Ok(NormRuleSet::default()),
    }
}

fn parse_ratios(s: &str) -> Result<SplitRatios> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("ratios {s:?} are not numbers")))?;
    match parts[..] {
        [a, b, c] => SplitRatios::new(a, b, c),
        _ => Err(Error::InvalidArgument(format!("expected three ratios, got {s:?}"))),
    }
}

fn normalize(a: NormalizeArgs) -> Result<()> {
    let rules = load_rules(&a.rules)?;
    let report = if a.input.extension().is_some_and(|e| e == "jsonl") {
        let m = Manifest::read_jsonl(&a.input)?;
        let (out, report) = normalize_manifest(&m, &rules);
        out.write_jsonl(&a.output)?;
        report
    } else {
        let mut report = NormReport::new(&rules);
        let mut out = String::new();
        for line in read_text(&a.input)?.lines() {
            let (text, counts) = normalize_line(line, &rules);
            report.add_line(&counts);
            out.push_str(&text);
            out.push('\n');
        }
        write_file(&a.output, out)?;
        report
    };
    match a.report {
        Some(p) => write_file(&p, report.to_table()),
        None => {
            eprint!("{}", report.to_table());
            Ok(())
        }
    }
}

fn split_cmd(a: SplitArgs) -> Result<()> {
    let m = Manifest::read_jsonl(&a.manifest)?;
    let out = split(&m, &parse_ratios(&a.ratios)?, a.seed, a.by_group)?;
    out.write_jsonl(&a.output)?;
    let [tr, ev, te] = split_sizes(&out);
    eprintln!("train {tr}, eval {ev}, test {te}");
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let rules = load_rules(&a.rules)?;
    let lines = load_corpus_text(&a.corpus, &rules)?;
    let atlases = if a.atlas.is_empty() {
        builtin_atlases()
    } else {
        a.atlas.iter().map(GlyphAtlas::load).collect::<Result<_>>()?
    };
    let mut opts = SynthOptions {
        count: a.count,
        seed: a.seed,
        stage: a.stage,
        ..SynthOptions::default()
    };
    if a.clean {
        opts.pipeline = htrkit::augment::NoisePipeline::none();
    }
    let (m, report) = synthesize_corpus(&lines, &atlases, &opts, Some(&a.out))?;
    m.write_jsonl(a.out.join("manifest.jsonl"))?;
    for (c, n) in &report.unknown {
        eprintln!("no glyph for U+{:04X} ({n} times)", *c as u32);
    }
    eprintln!("{} images", m.len());
    Ok(())
}

fn augment(a: AugmentArgs) -> Result<()> {
    let m = Manifest::read_jsonl(&a.manifest)?;
    let k: usize = a.multiplicity.parse().expect("restricted by clap");
    let pool = match &a.pool {
        Some(p) => read_pool(p)?,
        None => suite_pool(),
    };
    let out = if a.all_splits {
        expand_dataset(&m, k, &pool, a.seed)?
    } else {
        expand_train_split(&m, k, &pool, a.seed)?
    };
    if let Some(root) = &a.images {
        materialize_variants(&out, root)?;
    }
    out.write_jsonl(&a.output)?;
    eprintln!("{} → {} records", m.len(), out.len());
    Ok(())
}

fn corpus_lines(paths: &[PathBuf]) -> Result<Vec<String>> {
    let mut lines = Vec::new();
    for p in paths {
        if p.extension().is_some_and(|e| e == "jsonl") {
            lines.extend(Manifest::read_jsonl(p)?.records.into_iter().map(|r| r.text));
        } else {
            lines.extend(read_text(p)?.lines().filter(|l| !l.is_empty()).map(str::to_string));
        }
    }
    Ok(lines)
}

fn train_tokenizer(a: TrainTokenizerArgs) -> Result<()> {
    let lines = corpus_lines(&a.corpus)?;
    let model = train_bpe(&lines, a.vocab_size, a.mode.into())?;
    model.save(&a.output)?;
    eprintln!(
        "vocabulary {} of {} requested ({} merges)",
        model.vocab_size(),
        a.vocab_size,
        model.merges().len()
    );
    Ok(())
}

fn tokenize(a: TokenizeArgs) -> Result<()> {
    let model = BpeModel::load(&a.model)?;
    let mut out = String::new();
    for line in read_text(&a.input)?.lines() {
        if a.decode {
            let ids: Vec<TokenId> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::InvalidArgument(format!("bad token id {t:?}"))))
                .collect::<Result<_>>()?;
            out.push_str(&model.decode(&ids));
        } else {
            let ids: Vec<String> = model.encode(line).iter().map(|i| i.to_string()).collect();
            out.push_str(&ids.join(" "));
        }
        out.push('\n');
    }
    write_file(&a.output, out)
}

fn score(a: ScoreArgs) -> Result<()> {
    let preds = read_predictions(&a.predictions)?;
    let opts = EvalOptions {
        strip_zero_width: !a.keep_zero_width,
        empty_reference: if a.strict {
            EmptyReferencePolicy::Fail
        } else {
            EmptyReferencePolicy::Skip
        },
    };
    let s = evaluate(&preds, &opts)?;
    match &a.json {
        Some(p) => write_file(p, s.to_json())?,
        None => print!("{}", s.to_json()),
    }
    if let Some(p) = &a.csv {
        write_file(p, s.to_csv())?;
    }
    Ok(())
}

fn result_json(id: Option<&str>, r: &DecodeResult, text: Option<String>) -> String {
    let v = json!({
        "id": id,
        "tokens": r.tokens,
        "text": text,
        "log_prob": r.log_prob,
        "probability": r.probability,
        "truncated": r.truncated,
        "steps": r.steps.iter().map(|s| json!({"chosen": s.chosen, "top": s.top, "relative_prob": s.relative_prob()})).collect::<Vec<_>>(),
    });
    serde_json::to_string(&v).expect("json value serializes") + "\n"
}

fn decode_cmd(a: DecodeArgs) -> Result<()> {
    let cfg = a.strategy.config()?;
    let vocab = a.tokenizer.as_ref().map(BpeModel::load).transpose()?;
    let mut out = String::new();
    if let Some(p) = &a.scorer {
        let s = MarkovScorer::load(p)?;
        let r = decode(&s, &cfg)?;
        let labels: Vec<&str> = r.tokens.iter().map(|&t| s.labels()[t as usize].as_str()).collect();
        out.push_str(&result_json(None, &r, Some(labels.join(" "))));
    } else if let Some(p) = &a.replay {
        let set = ReplaySet::load(p)?;
        for (i, id) in set.ids().enumerate() {
            let scorer = set.scorer(id).expect("listed id");
            let c = cfg.with_seed(htrkit::rng::derive_seed(cfg.seed, &[i as u64]));
            let r = decode(&scorer, &c)?;
            let text = vocab.as_ref().map(|v| v.decode_ids(&r.content_tokens()));
            out.push_str(&result_json(Some(id), &r, text));
        }
    }
    match &a.output {
        Some(p) => write_file(p, out),
        None => {
            print!("{out}");
            Ok(())
        }
    }
}

fn references(path: &Path, split_name: &str) -> Result<Vec<(String, String)>> {
    let m = Manifest::read_jsonl(path)?;
    let s: Split = split_name.parse()?;
    Ok(m.iter()
        .filter(|r| r.split == Some(s) && r.is_original())
        .map(|r| (r.id.clone(), r.text.clone()))
        .collect())
}

fn grid(a: GridArgs) -> Result<()> {
    let set = ReplaySet::load(&a.replay)?;
    let vocab = BpeModel::load(&a.tokenizer)?;
    let eval = references(&a.references, &a.split)?;
    let configs: Vec<DecodeConfig> = match &a.grid {
        Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| Error::json(p.display().to_string(), e))?,
        None => default_grid(a.max_len, a.seed),
    };
    let (configs, skipped): (Vec<_>, Vec<_>) = configs
        .into_iter()
        .partition(|c| !matches!(c.strategy, Strategy::Contrastive { .. }));
    for c in &skipped {
        eprintln!("skipping {} {}: replay scorers carry no token representations", c.strategy.name(), c.strategy.params());
    }
    let rows = run_grid(
        |_, id| set.scorer(id).ok_or_else(|| Error::InvalidArgument(format!("no replay distributions for {id}"))),
        &eval,
        &configs,
        &vocab,
    )?;
    write_file(&a.output, grid_to_csv(&rows))
}

fn parse_fraction(s: &str) -> Result<htrkit::metrics::Rate> {
    let bad = || Error::InvalidArgument(format!("{s:?} is not a fraction n/d"));
    let (n, d) = s.split_once('/').unwrap_or((s, "1"));
    let n: u64 = n.trim().parse().map_err(|_| bad())?;
    let d: u64 = d.trim().parse().map_err(|_| bad())?;
    if d == 0 {
        return Err(bad());
    }
    Ok(rate(n, d))
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let preds: Vec<Prediction> = read_predictions(&a.predictions)?;
    let alignments: Vec<_> = preds
        .iter()
        .map(|p| (p.id.clone(), align(&p.reference, &p.hypothesis)))
        .collect();
    let uncertainty = match (&a.replay, &a.tokenizer) {
        (Some(r), Some(t)) => {
            let set = ReplaySet::load(r)?;
            let vocab = BpeModel::load(t)?;
            let mut items = Vec::new();
            for p in &preds {
                let scorer = set
                    .scorer(&p.id)
                    .ok_or_else(|| Error::InvalidArgument(format!("no replay distributions for {}", p.id)))?;
                items.push((p.id.clone(), p.reference.clone(), decode(&scorer, &DecodeConfig::new(Strategy::Greedy))?));
            }
            Some(uncertainty_scan(&items, &vocab, a.threshold))
        }
        _ => None,
    };
    let sweep = match &uncertainty {
        Some(u) if !u.records.is_empty() => Some(threshold_sweep(&u.records, &default_threshold_grid())?),
        _ => None,
    };
    let written = write_reports(
        &a.out_dir,
        &AnalysisInputs {
            alignments: &alignments,
            uncertainty: uncertainty.as_ref(),
            sweep: sweep.as_ref(),
            histogram_width: parse_fraction(&a.bin_width)?,
            length_edges: a.length_edges,
        },
    )?;
    eprintln!("wrote {}", written.join(", "));
    Ok(())
}

fn binarize_cmd(a: BinarizeArgs) -> Result<()> {
    let img = GrayImage::load(&a.input)?;
    let t = match a.threshold {
        Some(t) => t,
        None => {
            let o = otsu_threshold(&img);
            if o.degenerate {
                eprintln!("single-valued image; threshold {}", o.threshold);
            }
            o.threshold
        }
    };
    binarize(&img, t).save(&a.output)?;
    eprintln!("threshold {t}");
    Ok(())
}

fn audit(a: AuditArgs) -> Result<()> {
    let m = Manifest::read_jsonl(&a.manifest)?;
    let leaks = m.audit_leakage();
    if leaks.is_empty() {
        eprintln!("{} records, no split leakage", m.len());
        Ok(())
    } else {
        for id in &leaks {
            println!("{id}");
        }
        Err(Error::InvalidManifest(format!("{} variants leak across splits", leaks.len())))
    }
}

fn stage_report_cmd(a: StageReportArgs) -> Result<()> {
    let manifests: Vec<Manifest> = a.manifests.iter().map(Manifest::read_jsonl).collect::<Result<_>>()?;
    let r = stage_report(&manifests);
    print!("{}", if a.csv { r.to_csv() } else { r.to_table() });
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if !a.corpus.is_empty() {
        cfg.corpus = a.corpus;
    }
    if let Some(v) = a.corpus_lines {
        cfg.corpus_lines = v;
    }
    if let Some(v) = a.multiplicity {
        cfg.multiplicity = v;
    }
    if let Some(v) = a.vocab_size {
        cfg.vocab_size = v;
    }
    if a.rules.is_some() {
        cfg.rules = a.rules;
    }
    if let Some(v) = a.threshold {
        cfg.threshold = v;
    }
    let s = run_end_to_end(&cfg, &a.out_dir)?;
    let [tr, ev, te] = s.split_sizes;
    eprintln!(
        "{} lines (train {tr}, eval {ev}, test {te}), {} records after augmentation, vocabulary {}, test CER {:.4}, {} artifacts",
        s.corpus_lines,
        s.augmented_records,
        s.vocab_size,
        htrkit::metrics::rate_to_f64(&s.test_weighted_cer),
        s.artifacts.len()
    );
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Normalize(a) => normalize(a),
        Command::Split(a) => split_cmd(a),
        Command::Synth(a) => synth(a),
        Command::Augment(a) => augment(a),
        Command::TrainTokenizer(a) => train_tokenizer(a),
        Command::Tokenize(a) => tokenize(a),
        Command::Score(a) => score(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Grid(a) => grid(a),
        Command::Analyze(a) => analyze(a),
        Command::Binarize(a) => binarize_cmd(a),
        Command::Audit(a) => audit(a),
        Command::StageReport(a) => stage_report_cmd(a),
        Command::Run(a) => run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match with_workers(|| dispatch(cli.command)).and_then(|r| r) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
