//! Command-line front end. Every subcommand resolves a [`RunConfig`] from an
//! optional JSON file plus flag overrides, runs one pipeline stage, and
//! writes a `<artifact>.manifest.json` next to each file it produces.
//!
//! Exit codes: 0 success, 1 invalid input or config, 2 runtime failure. On
//! failure a JSON object `{"error": {...}}` is printed to stderr.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, write_csvs, AnalysisConfig};
use crate::classifier::{
    argmax, meta_path, train_classifier, BlackBox, ClassifierConfig, ClassifierMeta, ClassifierParams,
};
use crate::corpus::{
    generate_planted_corpus, load_corpus, CorpusFormat, CorpusSplit, LabeledText, PlantedConfig, SplitName, Task,
};
use crate::digest::{derive_seed, sha256_file};
use crate::error::{Error, Result};
use crate::evaluate::{overlap_eval, render_heatmap, HeatMap, MethodSaliencies, RenderFormat};
use crate::postag::Lexicon;
use crate::prsalm::{build_prsalm, load_prsalm, save_prsalm, PrSalMRecord, PrSalMSource, PrSalMSplit};
use crate::saliency::{explain, masking_saliency, ExplainConfig, SaliencyMethod, SaliencyVector};
use crate::seq2saliency::{s2s_inputs, s2s_predict, train_s2s, S2SConfig, S2SMeta, S2SParams};
use crate::tokenize::{tokenize, tokenize_pair, train_vocab, Method, TokenizedSample, Vocab};

pub const LOG_ENV: &str = "SALIENTSEQ_LOG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub corpus: u64,
    pub classifier: u64,
    pub shap: u64,
    pub s2s: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            corpus: 13,
            classifier: 17,
            shap: 19,
            s2s: 23,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerSettings {
    pub method: Method,
    pub vocab_size: usize,
}

impl Default for TokenizerSettings {
    fn default() -> Self {
        Self {
            method: Method::WordPiece,
            vocab_size: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSettings {
    /// Declared class count; inferred from labels when absent.
    pub classes: Option<usize>,
    /// Fraction of train carved out for each of val and test when the corpus
    /// file has no split column.
    pub holdout_fraction: f64,
    pub planted_per_class: usize,
    pub planted_val: usize,
    pub planted_test: usize,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        Self {
            classes: None,
            holdout_fraction: 0.1,
            planted_per_class: 750,
            planted_val: 250,
            planted_test: 250,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodFlag {
    Shap,
    Mask,
    S2s,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaliencySettings {
    /// Use exact enumeration instead of Kernel SHAP.
    pub exact: bool,
    /// Coalition budget; `None` means min(2^M - 2, 2M + 2048).
    pub budget: Option<usize>,
}

impl Default for SaliencySettings {
    fn default() -> Self {
        Self {
            exact: false,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlapSettings {
    pub n_groups: usize,
    pub group_size: usize,
    pub shuffle_seed: Option<u64>,
}

impl Default for OverlapSettings {
    fn default() -> Self {
        Self {
            n_groups: 10,
            group_size: 100,
            shuffle_seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub prsalm: Option<PathBuf>,
    pub s2s: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Seeds,
    pub tokenizer: TokenizerSettings,
    pub corpus: CorpusSettings,
    pub classifier: ClassifierConfig,
    pub saliency: SaliencySettings,
    pub s2s: S2SConfig,
    pub theta: f64,
    pub theta_grid: Vec<f64>,
    pub overlap: OverlapSettings,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: Seeds::default(),
            tokenizer: TokenizerSettings::default(),
            corpus: CorpusSettings::default(),
            classifier: ClassifierConfig::default(),
            saliency: SaliencySettings::default(),
            s2s: S2SConfig::default(),
            theta: 0.3,
            theta_grid: vec![0.1, 0.2, 0.3],
            overlap: OverlapSettings::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file. A run manifest is accepted too, in which case its
    /// embedded config is used.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        let value = match value.get("tool") {
            Some(_) => value.get("config").cloned().unwrap_or_default(),
            None => value,
        };
        serde_json::from_value(value).map_err(|e| Error::config("--config", e.to_string()))
    }

    fn check(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::config("theta", format!("{} outside (0, 1]", self.theta)));
        }
        if let Some(t) = self.theta_grid.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::config("theta_grid", format!("{t} outside (0, 1]")));
        }
        if !(0.0..0.5).contains(&self.corpus.holdout_fraction) {
            return Err(Error::config("corpus.holdout_fraction", "must be in [0, 0.5)"));
        }
        Ok(())
    }
}

/// Provenance record written next to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

#[derive(Debug, Parser)]
#[command(
    name = "salientseq",
    version,
    about = "Token saliency for text classifiers: SHAP, occlusion, PrSalM and Seq2Saliency"
)]
pub struct Cli {
    /// JSON run config (or a run manifest to replay).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub seed_corpus: Option<u64>,
    #[arg(long, global = true)]
    pub seed_classifier: Option<u64>,
    #[arg(long, global = true)]
    pub seed_shap: Option<u64>,
    #[arg(long, global = true)]
    pub seed_s2s: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-class corpus with planted trigger tokens.
    GenCorpus(GenCorpusArgs),
    /// Learn a WordPiece or BPE vocabulary from a corpus's train split.
    TrainTokenizer(TrainTokenizerArgs),
    /// Train the transformer classifier and write a checkpoint.
    TrainClassifier(TrainClassifierArgs),
    /// Saliency for one text or for corpus samples, as jsonl.
    Explain(ExplainArgs),
    /// Annotate every corpus sample with saliency, POS, position and frequency.
    BuildPrsalm(BuildPrsalmArgs),
    /// POS / position / frequency statistics of top-θ tokens.
    Analyze(AnalyzeArgs),
    /// Train the Seq2Saliency regressor on a PrSalM file.
    TrainS2s(TrainS2sArgs),
    /// Seq2Saliency predictions (never queries the classifier).
    InferS2s(InferS2sArgs),
    /// Grouped top-θ overlap of masking and Seq2Saliency with SHAP.
    EvalOverlap(EvalOverlapArgs),
    /// Heat map of one PrSalM record or one Seq2Saliency prediction.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainTokenizerArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub tokenizer: Option<Method>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainClassifierArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long, value_enum, default_value = "shap")]
    pub method: MethodFlag,
    #[arg(long)]
    pub text: Option<String>,
    /// Hypothesis for inference (sentence-pair) input.
    #[arg(long)]
    pub pair: Option<String>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Explain at most this many corpus samples.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub s2s: Option<PathBuf>,
    /// Class to explain; defaults to the predicted class.
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long)]
    pub exact: bool,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildPrsalmArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "shap")]
    pub method: MethodFlag,
    #[arg(long)]
    pub budget: Option<usize>,
    /// Keep at most this many samples per split.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub prsalm: Option<PathBuf>,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub csv_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainS2sArgs {
    #[arg(long)]
    pub prsalm: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferS2sArgs {
    #[arg(long)]
    pub s2s: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub text: Option<String>,
    #[arg(long)]
    pub pair: Option<String>,
    #[arg(long)]
    pub prsalm: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalOverlapArgs {
    #[arg(long)]
    pub prsalm: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub s2s: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub groups: Option<usize>,
    /// Samples per group.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub prsalm: Option<PathBuf>,
    /// Record id; defaults to the first record of `--split`.
    #[arg(long)]
    pub id: Option<String>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub text: Option<String>,
    #[arg(long)]
    pub s2s: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, default_value = "html")]
    pub format: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            report_error(&Error::config("arguments", e.to_string().trim().to_string()));
            return 1;
        }
    };
    init_logging();
    let jobs = cli.jobs.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => {
            report_error(&Error::config("--jobs", e.to_string()));
            return 1;
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            report_error(&e);
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn report_error(e: &Error) {
    let mut obj = serde_json::json!({ "kind": e.kind(), "message": e.to_string() });
    if let Error::Config { field, .. } = e {
        obj["field"] = serde_json::Value::String(field.clone());
    }
    eprintln!("{}", serde_json::json!({ "error": obj }));
}

/// Resolves config and dispatches; exposed for in-process use.
pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed_corpus {
        cfg.seeds.corpus = s;
    }
    if let Some(s) = cli.seed_classifier {
        cfg.seeds.classifier = s;
    }
    if let Some(s) = cli.seed_shap {
        cfg.seeds.shap = s;
    }
    if let Some(s) = cli.seed_s2s {
        cfg.seeds.s2s = s;
    }
    match &cli.command {
        Command::GenCorpus(a) => gen_corpus(cfg, a),
        Command::TrainTokenizer(a) => train_tokenizer_cmd(cfg, a),
        Command::TrainClassifier(a) => train_classifier_cmd(cfg, a),
        Command::Explain(a) => explain_cmd(cfg, a),
        Command::BuildPrsalm(a) => build_prsalm_cmd(cfg, a),
        Command::Analyze(a) => analyze_cmd(cfg, a),
        Command::TrainS2s(a) => train_s2s_cmd(cfg, a),
        Command::InferS2s(a) => infer_s2s_cmd(cfg, a),
        Command::EvalOverlap(a) => eval_overlap_cmd(cfg, a),
        Command::Render(a) => render_cmd(cfg, a),
    }
}

fn set(slot: &mut Option<PathBuf>, flag: &Option<PathBuf>) {
    if flag.is_some() {
        *slot = flag.clone();
    }
}

/// A required input path: must be configured and must exist.
fn require(field: &str, path: &Option<PathBuf>) -> Result<PathBuf> {
    let p = path.clone().ok_or_else(|| {
        Error::config(
            field,
            "required path is missing (pass the flag or set it in the config)",
        )
    })?;
    if !p.exists() {
        return Err(Error::config(field, format!("{} does not exist", p.display())));
    }
    Ok(p)
}

fn ensure_parent(out: &Path) -> Result<()> {
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(())
}

struct Provenance {
    command: &'static str,
    inputs: Vec<(String, PathBuf)>,
}

impl Provenance {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            inputs: Vec::new(),
        }
    }

    fn input(mut self, field: &str, path: &Path) -> Self {
        self.inputs.push((field.to_string(), path.to_path_buf()));
        self
    }

    /// Writes `<artifact>.manifest.json` for the primary artifact, hashing all
    /// listed outputs.
    fn write(&self, cfg: &RunConfig, artifact: &Path, outputs: &[&Path]) -> Result<()> {
        let mut inputs = BTreeMap::new();
        for (field, p) in &self.inputs {
            inputs.insert(field.clone(), sha256_file(p)?);
        }
        let mut outs = BTreeMap::new();
        for p in outputs {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            outs.insert(name, sha256_file(p)?);
        }
        let manifest = RunManifest {
            tool: "salientseq".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            config: cfg.clone(),
            inputs,
            outputs: outs,
        };
        fs::write(manifest_path(artifact), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

fn load_corpus_cfg(cfg: &RunConfig, path: &Path) -> Result<CorpusSplit> {
    let format = CorpusFormat::from_path(path)
        .ok_or_else(|| Error::config("corpus", format!("{}: expected a .tsv or .jsonl file", path.display())))?;
    let mut corpus = load_corpus(path, format, cfg.corpus.classes)?;
    let n = corpus.train.len();
    let k = (n as f64 * cfg.corpus.holdout_fraction).round() as usize;
    corpus.ensure_holdout(k, k, cfg.seeds.corpus)?;
    Ok(corpus)
}

fn parse_split(s: &str) -> Result<Option<SplitName>> {
    match s {
        "train" => Ok(Some(SplitName::Train)),
        "val" => Ok(Some(SplitName::Val)),
        "test" => Ok(Some(SplitName::Test)),
        "all" => Ok(None),
        other => Err(Error::config(
            "--split",
            format!("`{other}` is not train, val, test or all"),
        )),
    }
}

fn prsalm_records(split: &PrSalMSplit, which: &str, limit: Option<usize>) -> Result<Vec<PrSalMRecord>> {
    let records: Vec<PrSalMRecord> = match parse_split(which)? {
        Some(name) => split.split(name).to_vec(),
        None => split.iter_all().cloned().collect(),
    };
    Ok(match limit {
        Some(n) => records.into_iter().take(n).collect(),
        None => records,
    })
}

fn write_jsonl_out<T: Serialize>(items: &[T], out: Option<&Path>) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    match out {
        Some(p) => {
            ensure_parent(p)?;
            fs::write(p, buf)?;
        }
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn gen_corpus(mut cfg: RunConfig, a: &GenCorpusArgs) -> Result<()> {
    if let Some(n) = a.n_per_class {
        cfg.corpus.planted_per_class = n;
    }
    if let Some(n) = a.val {
        cfg.corpus.planted_val = n;
    }
    if let Some(n) = a.test {
        cfg.corpus.planted_test = n;
    }
    cfg.check()?;
    let mut planted = PlantedConfig::two_class(
        cfg.corpus.planted_per_class,
        cfg.corpus.planted_val,
        cfg.corpus.planted_test,
        cfg.seeds.corpus,
    );
    if let Some(stem) = a.out.file_stem().and_then(|s| s.to_str()) {
        planted.name = stem.to_string();
    }
    let corpus = generate_planted_corpus(&planted)?;
    ensure_parent(&a.out)?;
    corpus.write_jsonl(&a.out)?;
    Provenance::new("gen-corpus").write(&cfg, &a.out, &[&a.out])
}

fn train_tokenizer_cmd(mut cfg: RunConfig, a: &TrainTokenizerArgs) -> Result<()> {
    set(&mut cfg.paths.corpus, &a.corpus);
    if let Some(m) = a.tokenizer {
        cfg.tokenizer.method = m;
    }
    if let Some(v) = a.vocab_size {
        cfg.tokenizer.vocab_size = v;
    }
    cfg.check()?;
    let corpus_path = require("corpus", &cfg.paths.corpus)?;
    let corpus = load_corpus_cfg(&cfg, &corpus_path)?;
    let mut texts: Vec<&str> = Vec::new();
    for s in &corpus.train {
        texts.push(&s.text);
        if let Some(p) = &s.pair_text {
            texts.push(p);
        }
    }
    let vocab = train_vocab(&texts, cfg.tokenizer.vocab_size, cfg.tokenizer.method)?;
    ensure_parent(&a.out)?;
    vocab.save(&a.out)?;
    Provenance::new("train-tokenizer")
        .input("corpus", &corpus_path)
        .write(&cfg, &a.out, &[&a.out])
}

fn load_vocab(cfg: &RunConfig) -> Result<(PathBuf, Vocab)> {
    let p = require("vocab", &cfg.paths.vocab)?;
    let v = Vocab::load(&p, None)?;
    Ok((p, v))
}

fn train_classifier_cmd(mut cfg: RunConfig, a: &TrainClassifierArgs) -> Result<()> {
    set(&mut cfg.paths.corpus, &a.corpus);
    set(&mut cfg.paths.vocab, &a.vocab);
    if let Some(e) = a.epochs {
        cfg.classifier.epochs = e;
    }
    cfg.check()?;
    let corpus_path = require("corpus", &cfg.paths.corpus)?;
    let (vocab_path, vocab) = load_vocab(&cfg)?;
    let corpus = load_corpus_cfg(&cfg, &corpus_path)?;
    cfg.classifier.classes = corpus.classes;
    let (params, report) = train_classifier(&corpus, &vocab, &cfg.classifier, cfg.seeds.classifier)?;
    ensure_parent(&a.out)?;
    let meta = ClassifierMeta {
        vocab_path: Some(vocab_path.display().to_string()),
        classes: corpus.classes,
        config: cfg.classifier.clone(),
        seed: cfg.seeds.classifier,
    };
    params.save(&a.out, &meta)?;
    println!("{}", serde_json::to_string(&report)?);
    Provenance::new("train-classifier")
        .input("corpus", &corpus_path)
        .input("vocab", &vocab_path)
        .write(&cfg, &a.out, &[&a.out, &meta_path(&a.out)])
}

fn tokenize_text(text: &str, pair: Option<&str>, vocab: &Vocab) -> TokenizedSample {
    match pair {
        Some(p) => tokenize_pair(text, p, vocab),
        None => tokenize(text, vocab),
    }
}

fn explain_cmd(mut cfg: RunConfig, a: &ExplainArgs) -> Result<()> {
    set(&mut cfg.paths.corpus, &a.corpus);
    set(&mut cfg.paths.vocab, &a.vocab);
    set(&mut cfg.paths.checkpoint, &a.checkpoint);
    set(&mut cfg.paths.s2s, &a.s2s);
    if a.exact {
        cfg.saliency.exact = true;
    }
    if a.budget.is_some() {
        cfg.saliency.budget = a.budget;
    }
    cfg.check()?;
    let (vocab_path, vocab) = load_vocab(&cfg)?;

    let samples: Vec<LabeledText> = match (&a.text, &cfg.paths.corpus) {
        (Some(text), _) => vec![LabeledText {
            id: "text".into(),
            text: text.clone(),
            pair_text: a.pair.clone(),
            label: 0,
            task: if a.pair.is_some() {
                Task::Inference
            } else {
                Task::Classification
            },
        }],
        (None, Some(_)) => {
            let p = require("corpus", &cfg.paths.corpus)?;
            let corpus = load_corpus_cfg(&cfg, &p)?;
            let picked: Vec<LabeledText> = match parse_split(&a.split)? {
                Some(name) => corpus.split(name).to_vec(),
                None => corpus.iter_all().map(|(_, s)| s.clone()).collect(),
            };
            picked.into_iter().take(a.samples.unwrap_or(usize::MAX)).collect()
        }
        (None, None) => return Err(Error::config("text", "pass --text or --corpus")),
    };

    let mut prov = Provenance::new("explain").input("vocab", &vocab_path);
    if let Some(p) = &cfg.paths.corpus {
        if a.text.is_none() {
            prov = prov.input("corpus", p);
        }
    }
    let vectors: Vec<SaliencyVector> = if a.method == MethodFlag::S2s {
        let s2s_path = require("s2s", &cfg.paths.s2s)?;
        prov = prov.input("s2s", &s2s_path);
        let (params, _) = S2SParams::load(&s2s_path)?;
        let lex = Lexicon::default();
        samples
            .iter()
            .map(|s| {
                let tok = s.tokenize(&vocab);
                let (ids, pos) = s2s_inputs(&tok, &lex)?;
                s2s_predict(&params, &ids, &pos, &s.id, a.target.unwrap_or(s.label))
            })
            .collect::<Result<_>>()?
    } else {
        let ckpt = require("checkpoint", &cfg.paths.checkpoint)?;
        prov = prov.input("checkpoint", &ckpt);
        let (model, _) = ClassifierParams::load(&ckpt)?;
        let method = match (a.method, cfg.saliency.exact) {
            (MethodFlag::Mask, _) => SaliencyMethod::Masking,
            (_, true) => SaliencyMethod::ShapExact,
            _ => SaliencyMethod::ShapSampled,
        };
        samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let tok = s.tokenize(&vocab);
                let target = match a.target {
                    Some(t) => t,
                    None => argmax(&model.predict(&tok.ids)?),
                };
                let ec = ExplainConfig {
                    method,
                    budget: cfg.saliency.budget,
                    seed: derive_seed(cfg.seeds.shap, i as u64),
                };
                explain(&model, &tok, &s.id, target, &ec)
            })
            .collect::<Result<_>>()?
    };
    write_jsonl_out(&vectors, a.out.as_deref())?;
    if let Some(out) = &a.out {
        prov.write(&cfg, out, &[out])?;
    }
    Ok(())
}

fn build_prsalm_cmd(mut cfg: RunConfig, a: &BuildPrsalmArgs) -> Result<()> {
    set(&mut cfg.paths.corpus, &a.corpus);
    set(&mut cfg.paths.vocab, &a.vocab);
    set(&mut cfg.paths.checkpoint, &a.checkpoint);
    if a.budget.is_some() {
        cfg.saliency.budget = a.budget;
    }
    cfg.check()?;
    let corpus_path = require("corpus", &cfg.paths.corpus)?;
    let (vocab_path, vocab) = load_vocab(&cfg)?;
    let ckpt = require("checkpoint", &cfg.paths.checkpoint)?;
    let mut corpus = load_corpus_cfg(&cfg, &corpus_path)?;
    if let Some(n) = a.samples {
        corpus.train.truncate(n);
        corpus.val.truncate(n);
        corpus.test.truncate(n);
    }
    let (model, _) = ClassifierParams::load(&ckpt)?;
    let method = match (a.method, cfg.saliency.exact) {
        (MethodFlag::Mask, _) => SaliencyMethod::Masking,
        (MethodFlag::S2s, _) => return Err(Error::config("--method", "PrSalM labels come from shap or mask")),
        (_, true) => SaliencyMethod::ShapExact,
        _ => SaliencyMethod::ShapSampled,
    };
    let source = PrSalMSource {
        source_corpus: corpus_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        checkpoint_sha256: sha256_file(&ckpt)?,
        saliency: ExplainConfig {
            method,
            budget: cfg.saliency.budget,
            seed: cfg.seeds.shap,
        },
    };
    let split = build_prsalm(&corpus, &vocab, &Lexicon::default(), &model, &source, cfg.seeds.shap)?;
    ensure_parent(&a.out)?;
    save_prsalm(&split, &a.out)?;
    Provenance::new("build-prsalm")
        .input("corpus", &corpus_path)
        .input("vocab", &vocab_path)
        .input("checkpoint", &ckpt)
        .write(&cfg, &a.out, &[&a.out])
}

fn analyze_cmd(mut cfg: RunConfig, a: &AnalyzeArgs) -> Result<()> {
    set(&mut cfg.paths.prsalm, &a.prsalm);
    if let Some(t) = a.theta {
        cfg.theta = t;
    }
    cfg.check()?;
    let path = require("prsalm", &cfg.paths.prsalm)?;
    let loaded = load_prsalm(&path, None)?;
    let records = prsalm_records(&loaded.split, &a.split, a.samples)?;
    let acfg = AnalysisConfig {
        theta: cfg.theta,
        theta_grid: cfg.theta_grid.clone(),
        ..AnalysisConfig::default()
    };
    let report = analyze(&records, &acfg)?;
    ensure_parent(&a.out)?;
    fs::write(&a.out, serde_json::to_string_pretty(&report)? + "\n")?;
    if let Some(dir) = &a.csv_dir {
        write_csvs(&report, dir)?;
    }
    Provenance::new("analyze")
        .input("prsalm", &path)
        .write(&cfg, &a.out, &[&a.out])
}

fn train_s2s_cmd(mut cfg: RunConfig, a: &TrainS2sArgs) -> Result<()> {
    set(&mut cfg.paths.prsalm, &a.prsalm);
    set(&mut cfg.paths.vocab, &a.vocab);
    if let Some(e) = a.epochs {
        cfg.s2s.epochs = e;
    }
    cfg.s2s.seed = cfg.seeds.s2s;
    cfg.check()?;
    let path = require("prsalm", &cfg.paths.prsalm)?;
    let (vocab_path, vocab) = load_vocab(&cfg)?;
    let loaded = load_prsalm(&path, None)?;
    if loaded.split.manifest.tokenizer != vocab.method() {
        return Err(Error::config(
            "vocab",
            format!(
                "PrSalM was built with {} but the vocabulary is {}",
                loaded.split.manifest.tokenizer,
                vocab.method()
            ),
        ));
    }
    let (params, log) = train_s2s(&loaded.split, &vocab, &cfg.s2s)?;
    ensure_parent(&a.out)?;
    let meta = S2SMeta {
        config: cfg.s2s.clone(),
        vocab_path: Some(vocab_path.display().to_string()),
        prsalm_sha256: Some(sha256_file(&path)?),
    };
    params.save(&a.out, &meta)?;
    let mut log_path = a.out.as_os_str().to_owned();
    log_path.push(".loss.csv");
    let log_path = PathBuf::from(log_path);
    fs::write(&log_path, log.to_csv())?;
    Provenance::new("train-s2s")
        .input("prsalm", &path)
        .input("vocab", &vocab_path)
        .write(&cfg, &a.out, &[&a.out, &meta_path(&a.out), &log_path])
}

fn infer_s2s_cmd(mut cfg: RunConfig, a: &InferS2sArgs) -> Result<()> {
    set(&mut cfg.paths.s2s, &a.s2s);
    set(&mut cfg.paths.vocab, &a.vocab);
    set(&mut cfg.paths.prsalm, &a.prsalm);
    cfg.check()?;
    let s2s_path = require("s2s", &cfg.paths.s2s)?;
    let (vocab_path, vocab) = load_vocab(&cfg)?;
    let (params, _) = S2SParams::load(&s2s_path)?;
    let mut prov = Provenance::new("infer-s2s")
        .input("s2s", &s2s_path)
        .input("vocab", &vocab_path);
    let vectors: Vec<SaliencyVector> = match (&a.text, &cfg.paths.prsalm) {
        (Some(text), _) => {
            let tok = tokenize_text(text, a.pair.as_deref(), &vocab);
            let (ids, pos) = s2s_inputs(&tok, &Lexicon::default())?;
            vec![s2s_predict(&params, &ids, &pos, "text", 0)?]
        }
        (None, Some(p)) => {
            prov = prov.input("prsalm", p);
            let loaded = load_prsalm(p, None)?;
            prsalm_records(&loaded.split, &a.split, a.samples)?
                .iter()
                .map(|r| {
                    let ids: Vec<u32> = r.tokens.iter().map(|t| vocab.id_or_unk(t)).collect();
                    s2s_predict(&params, &ids, &r.pos, &r.id, r.label)
                })
                .collect::<Result<_>>()?
        }
        (None, None) => return Err(Error::config("text", "pass --text or --prsalm")),
    };
    write_jsonl_out(&vectors, a.out.as_deref())?;
    if let Some(out) = &a.out {
        prov.write(&cfg, out, &[out])?;
    }
    Ok(())
}

fn eval_overlap_cmd(mut cfg: RunConfig, a: &EvalOverlapArgs) -> Result<()> {
    set(&mut cfg.paths.prsalm, &a.prsalm);
    set(&mut cfg.paths.corpus, &a.corpus);
    set(&mut cfg.paths.vocab, &a.vocab);
    set(&mut cfg.paths.checkpoint, &a.checkpoint);
    set(&mut cfg.paths.s2s, &a.s2s);
    if let Some(t) = a.theta {
        cfg.theta = t;
    }
    if let Some(g) = a.groups {
        cfg.overlap.n_groups = g;
    }
    if let Some(n) = a.samples {
        cfg.overlap.group_size = n;
    }
    if a.shuffle_seed.is_some() {
        cfg.overlap.shuffle_seed = a.shuffle_seed;
    }
    cfg.check()?;
    let prsalm_path = require("prsalm", &cfg.paths.prsalm)?;
    let corpus_path = require("corpus", &cfg.paths.corpus)?;
    let (vocab_path, vocab) = load_vocab(&cfg)?;
    let ckpt = require("checkpoint", &cfg.paths.checkpoint)?;
    let s2s_path = require("s2s", &cfg.paths.s2s)?;

    let ckpt_hash = sha256_file(&ckpt)?;
    let loaded = load_prsalm(&prsalm_path, Some(&ckpt_hash))?;
    let corpus = load_corpus_cfg(&cfg, &corpus_path)?;
    let by_id: HashMap<&str, &LabeledText> = corpus.iter_all().map(|(_, s)| (s.id.as_str(), s)).collect();
    let (model, _) = ClassifierParams::load(&ckpt)?;
    let (s2s, _) = S2SParams::load(&s2s_path)?;
    let records = prsalm_records(&loaded.split, &a.split, None)?;
    let lex = Lexicon::default();
    let samples: Vec<MethodSaliencies> = records
        .iter()
        .map(|r| {
            let src = by_id
                .get(r.id.as_str())
                .ok_or_else(|| Error::validation(format!("record {} is not in the corpus", r.id)))?;
            let tok = src.tokenize(&vocab);
            let masking = masking_saliency(&model, &tok, &r.id, r.label)?;
            let (ids, pos) = s2s_inputs(&tok, &lex)?;
            let pred = s2s_predict(&s2s, &ids, &pos, &r.id, r.label)?;
            if masking.raw.len() != r.saliency_raw.len() {
                return Err(Error::validation(format!(
                    "record {}: corpus tokenization does not match the PrSalM tokens",
                    r.id
                )));
            }
            Ok(MethodSaliencies {
                id: r.id.clone(),
                shap: r.saliency_raw.clone(),
                masking: masking.raw,
                s2s: pred.raw,
            })
        })
        .collect::<Result<_>>()?;
    let report = overlap_eval(
        &samples,
        cfg.overlap.n_groups,
        cfg.overlap.group_size,
        cfg.theta,
        cfg.overlap.shuffle_seed,
    )?;
    print!("{}", report.to_table());
    ensure_parent(&a.out)?;
    fs::write(&a.out, serde_json::to_string_pretty(&report)? + "\n")?;
    Provenance::new("eval-overlap")
        .input("prsalm", &prsalm_path)
        .input("corpus", &corpus_path)
        .input("vocab", &vocab_path)
        .input("checkpoint", &ckpt)
        .input("s2s", &s2s_path)
        .write(&cfg, &a.out, &[&a.out])
}

fn render_cmd(mut cfg: RunConfig, a: &RenderArgs) -> Result<()> {
    set(&mut cfg.paths.prsalm, &a.prsalm);
    set(&mut cfg.paths.s2s, &a.s2s);
    set(&mut cfg.paths.vocab, &a.vocab);
    cfg.check()?;
    let format: RenderFormat = a
        .format
        .parse()
        .map_err(|_| Error::config("--format", "expected html or ansi"))?;
    let mut prov = Provenance::new("render");
    let map = match &a.text {
        Some(text) => {
            let s2s_path = require("s2s", &cfg.paths.s2s)?;
            let (vocab_path, vocab) = load_vocab(&cfg)?;
            prov = prov.input("s2s", &s2s_path).input("vocab", &vocab_path);
            let (params, _) = S2SParams::load(&s2s_path)?;
            let tok = tokenize(text, &vocab);
            let (ids, pos) = s2s_inputs(&tok, &Lexicon::default())?;
            let v = s2s_predict(&params, &ids, &pos, "text", 0)?;
            HeatMap::new(tok.analyzable_pieces().map(String::from).collect(), v.norm, None)?
        }
        None => {
            let path = require("prsalm", &cfg.paths.prsalm)?;
            prov = prov.input("prsalm", &path);
            let loaded = load_prsalm(&path, None)?;
            let records = prsalm_records(&loaded.split, &a.split, None)?;
            let rec = match &a.id {
                Some(id) => loaded
                    .split
                    .iter_all()
                    .find(|r| &r.id == id)
                    .cloned()
                    .ok_or_else(|| Error::config("--id", format!("no record with id {id}")))?,
                None => records
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::validation(format!("split {} is empty", a.split)))?,
            };
            HeatMap::new(
                rec.tokens,
                rec.saliency_norm,
                Some(format!("{} (label {})", rec.id, rec.label)),
            )?
        }
    };
    let text = render_heatmap(&map, format);
    match &a.out {
        Some(out) => {
            ensure_parent(out)?;
            fs::write(out, &text)?;
            prov.write(&cfg, out, &[out])?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_uses_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seeds": {"shap": 5}, "classifier": {"epochs": 2}}"#).unwrap();
        assert_eq!(cfg.seeds.shap, 5);
        assert_eq!(cfg.seeds.corpus, Seeds::default().corpus);
        assert_eq!(cfg.classifier.epochs, 2);
        assert_eq!(cfg.classifier.d_model, 64);
    }

    #[test]
    fn unknown_config_key_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sedes": {}}"#).is_err());
    }

    #[test]
    fn manifest_is_accepted_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.seeds.s2s = 99;
        let m = RunManifest {
            tool: "salientseq".into(),
            version: "0".into(),
            command: "train-s2s".into(),
            config: cfg.clone(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        };
        let p = dir.path().join("m.json");
        fs::write(&p, serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(RunConfig::load(&p).unwrap(), cfg);
    }

    #[test]
    fn missing_path_names_field() {
        match require("vocab", &None) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "vocab"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_theta_rejected() {
        let cfg = RunConfig {
            theta: 1.5,
            ..RunConfig::default()
        };
        assert!(cfg.check().is_err());
    }
}
