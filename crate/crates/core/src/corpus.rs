//! Labeled text corpora: loading, planted-signal generation, and training-split
//! token frequencies.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::{tokenize, tokenize_pair, TokenizedSample, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Inference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub id: String,
    pub text: String,
    pub pair_text: Option<String>,
    pub label: usize,
    pub task: Task,
}

impl LabeledText {
    pub fn classification(id: impl Into<String>, text: impl Into<String>, label: usize) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            pair_text: None,
            label,
            task: Task::Classification,
        }
    }

    /// Tokenizes the text, or the `[CLS] text [SEP] pair [SEP]` layout for
    /// inference samples.
    pub fn tokenize(&self, vocab: &Vocab) -> TokenizedSample {
        match &self.pair_text {
            Some(pair) => tokenize_pair(&self.text, pair, vocab),
            None => tokenize(&self.text, vocab),
        }
    }

    fn check(&self, classes: usize) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::validation(format!("sample {} has empty text", self.id)));
        }
        if self.label >= classes {
            return Err(Error::validation(format!(
                "sample {} has label {} but the corpus declares {} classes",
                self.id, self.label, classes
            )));
        }
        if self.pair_text.is_some() != (self.task == Task::Inference) {
            return Err(Error::validation(format!(
                "sample {}: pair text must be present exactly for inference samples",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub name: String,
    pub classes: usize,
    pub train: Vec<LabeledText>,
    pub val: Vec<LabeledText>,
    pub test: Vec<LabeledText>,
}

impl CorpusSplit {
    pub fn split(&self, which: SplitName) -> &[LabeledText] {
        match which {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn iter_all(&self) -> impl Iterator<Item = (SplitName, &LabeledText)> {
        self.train
            .iter()
            .map(|s| (SplitName::Train, s))
            .chain(self.val.iter().map(|s| (SplitName::Val, s)))
            .chain(self.test.iter().map(|s| (SplitName::Test, s)))
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks every corpus invariant, including non-empty splits.
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::validation("a corpus needs at least 2 classes"));
        }
        let mut seen = HashSet::new();
        for (_, sample) in self.iter_all() {
            sample.check(self.classes)?;
            if !seen.insert(sample.id.as_str()) {
                return Err(Error::validation(format!("duplicate sample id {}", sample.id)));
            }
        }
        for which in [SplitName::Train, SplitName::Val, SplitName::Test] {
            if self.split(which).is_empty() {
                return Err(Error::validation(format!("{} split is empty", which.as_str())));
            }
        }
        Ok(())
    }

    /// Carves val/test out of train when the source file carried no split
    /// information. Splits that are already populated are left alone.
    pub fn ensure_holdout(&mut self, val: usize, test: usize, seed: u64) -> Result<()> {
        let need_val = if self.val.is_empty() { val } else { 0 };
        let need_test = if self.test.is_empty() { test } else { 0 };
        if need_val + need_test == 0 {
            return Ok(());
        }
        if need_val + need_test >= self.train.len() {
            return Err(Error::validation(format!(
                "cannot carve {} holdout samples from {} training samples",
                need_val + need_test,
                self.train.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool = std::mem::take(&mut self.train);
        pool.shuffle(&mut rng);
        self.val.extend(pool.drain(..need_val));
        self.test.extend(pool.drain(..need_test));
        self.train = pool;
        Ok(())
    }

    /// Writes the corpus as jsonl with an explicit `split` key on every row.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for (which, sample) in self.iter_all() {
            let row = JsonlRow {
                id: Some(sample.id.clone()),
                text: sample.text.clone(),
                pair: sample.pair_text.clone(),
                label: sample.label as i64,
                split: Some(which),
            };
            serde_json::to_writer(&mut out, &row)?;
            out.push(b'\n');
        }
        fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "tsv" => Some(CorpusFormat::Tsv),
            "jsonl" => Some(CorpusFormat::Jsonl),
            _ => None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonlRow {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pair: Option<String>,
    label: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<SplitName>,
}

/// Loads a corpus file. `classes` fixes the declared class count; when `None`
/// it is inferred as `max(label) + 1` (at least 2).
///
/// Rows without split information land in `train`; use
/// [`CorpusSplit::ensure_holdout`] to carve val/test from them.
pub fn load_corpus(path: &Path, format: CorpusFormat, classes: Option<usize>) -> Result<CorpusSplit> {
    let content = fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("corpus")
        .to_string();
    let rows = match format {
        CorpusFormat::Jsonl => parse_jsonl(&content)?,
        CorpusFormat::Tsv => parse_tsv(&content)?,
    };

    let max_label = rows.iter().map(|(_, _, s)| s.label).max().unwrap_or(0);
    let classes = classes.unwrap_or((max_label + 1).max(2));
    let mut corpus = CorpusSplit {
        name,
        classes,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let mut seen = HashSet::new();
    for (line, split, sample) in rows {
        sample.check(classes).map_err(|e| match e {
            Error::Validation(msg) => Error::validation(format!("line {line}: {msg}")),
            other => other,
        })?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate id {}", sample.id),
            });
        }
        match split {
            SplitName::Train => corpus.train.push(sample),
            SplitName::Val => corpus.val.push(sample),
            SplitName::Test => corpus.test.push(sample),
        }
    }
    Ok(corpus)
}

fn parse_jsonl(content: &str) -> Result<Vec<(usize, SplitName, LabeledText)>> {
    let mut rows = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let row: JsonlRow = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if row.label < 0 {
            return Err(Error::Parse {
                line,
                msg: format!("negative label {}", row.label),
            });
        }
        let task = if row.pair.is_some() {
            Task::Inference
        } else {
            Task::Classification
        };
        rows.push((
            line,
            row.split.unwrap_or(SplitName::Train),
            LabeledText {
                id: row.id.unwrap_or_else(|| format!("L{line}")),
                text: row.text,
                pair_text: row.pair,
                label: row.label as usize,
                task,
            },
        ));
    }
    Ok(rows)
}

fn parse_tsv(content: &str) -> Result<Vec<(usize, SplitName, LabeledText)>> {
    let mut rows = Vec::new();
    let mut declared: Option<usize> = None;
    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        let expected = *declared.get_or_insert(cols.len());
        if !(2..=3).contains(&expected) {
            return Err(Error::Parse {
                line,
                msg: format!("expected 2 or 3 tab-separated columns, found {}", cols.len()),
            });
        }
        if cols.len() != expected {
            return Err(Error::Parse {
                line,
                msg: format!("found {} columns but the file declares {}", cols.len(), expected),
            });
        }
        let label: usize = cols[0].trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("label `{}` is not a nonnegative integer", cols[0]),
        })?;
        let pair_text = cols.get(2).map(|s| s.to_string());
        let task = if pair_text.is_some() {
            Task::Inference
        } else {
            Task::Classification
        };
        rows.push((
            line,
            SplitName::Train,
            LabeledText {
                id: format!("L{line}"),
                text: cols[1].to_string(),
                pair_text,
                label,
                task,
            },
        ));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub name: String,
    pub n_per_class: usize,
    /// One trigger list per class; the class count is `trigger_tokens.len()`.
    pub trigger_tokens: Vec<Vec<String>>,
    pub filler_vocab: Vec<String>,
    pub length_range: (usize, usize),
    pub val_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

impl PlantedConfig {
    /// A two-class corpus with disjoint nonsense triggers and a small filler
    /// vocabulary.
    pub fn two_class(n_per_class: usize, val_count: usize, test_count: usize, seed: u64) -> Self {
        let words = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
        Self {
            name: "planted".to_string(),
            n_per_class,
            trigger_tokens: vec![words("zark blim quov"), words("frop dax wunt")],
            filler_vocab: words(
                "the a movie film story was is and of it this that very with plot actors \
                 scene really quite some time people every just about",
            ),
            length_range: (4, 8),
            val_count,
            test_count,
            seed,
        }
    }
}

/// Builds a synthetic corpus where every class-`c` sample contains exactly one
/// token from `trigger_tokens[c]` at a uniform position, all other tokens
/// being filler. Samples are shuffled, then the first `val_count` go to val,
/// the next `test_count` to test, and the rest to train.
pub fn generate_planted_corpus(cfg: &PlantedConfig) -> Result<CorpusSplit> {
    let (min_len, max_len) = cfg.length_range;
    if min_len < 3 || min_len > max_len {
        return Err(Error::validation(format!(
            "length range ({min_len}, {max_len}) must satisfy 3 <= min <= max"
        )));
    }
    if cfg.trigger_tokens.len() < 2 || cfg.trigger_tokens.iter().any(|t| t.is_empty()) {
        return Err(Error::validation(
            "need a non-empty trigger list for each of at least 2 classes",
        ));
    }
    if cfg.filler_vocab.is_empty() {
        return Err(Error::validation("filler vocabulary is empty"));
    }
    let filler: HashSet<&str> = cfg.filler_vocab.iter().map(String::as_str).collect();
    let mut triggers_seen = HashSet::new();
    for tok in cfg.trigger_tokens.iter().flatten() {
        if filler.contains(tok.as_str()) {
            return Err(Error::validation(format!(
                "trigger `{tok}` also appears in the filler vocabulary"
            )));
        }
        if !triggers_seen.insert(tok.as_str()) {
            return Err(Error::validation(format!("trigger `{tok}` is shared between classes")));
        }
    }
    let total = cfg.n_per_class * cfg.trigger_tokens.len();
    if cfg.val_count + cfg.test_count > total {
        return Err(Error::validation(
            "holdout counts exceed the number of generated samples",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pool = Vec::with_capacity(total);
    for (class, triggers) in cfg.trigger_tokens.iter().enumerate() {
        for i in 0..cfg.n_per_class {
            let len = rng.gen_range(min_len..=max_len);
            let at = rng.gen_range(0..len);
            let words: Vec<&str> = (0..len)
                .map(|pos| {
                    if pos == at {
                        triggers[rng.gen_range(0..triggers.len())].as_str()
                    } else {
                        cfg.filler_vocab[rng.gen_range(0..cfg.filler_vocab.len())].as_str()
                    }
                })
                .collect();
            pool.push(LabeledText::classification(
                format!("p{class}-{i}"),
                words.join(" "),
                class,
            ));
        }
    }
    pool.shuffle(&mut rng);
    let val = pool.drain(..cfg.val_count).collect();
    let test = pool.drain(..cfg.test_count).collect();
    Ok(CorpusSplit {
        name: cfg.name.clone(),
        classes: cfg.trigger_tokens.len(),
        train: pool,
        val,
        test,
    })
}

/// Occurrence counts of tokenizer pieces over the training split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

impl FrequencyTable {
    pub fn get(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }
}

/// Counts every non-special piece of the given (training) samples.
pub fn build_frequency_table(train_tokens: &[TokenizedSample]) -> Result<FrequencyTable> {
    if train_tokens.is_empty() {
        return Err(Error::validation("cannot build a frequency table from zero samples"));
    }
    let mut table = FrequencyTable::default();
    for sample in train_tokens {
        for piece in sample.analyzable_pieces() {
            *table.counts.entry(piece.to_string()).or_insert(0) += 1;
            table.total += 1;
        }
    }
    Ok(table)
}
