//! PrSalM: per-token properties (POS, position, frequency) paired with
//! normalized saliency labels, the training data for Seq2Saliency.
//!
//! On disk the dataset is jsonl. Line 1 is the manifest; the records follow
//! in train, val, test order, and the manifest's `counts` say where each
//! split ends.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{argmax, BlackBox};
use crate::corpus::{build_frequency_table, CorpusSplit, FrequencyTable, SplitName, Task};
use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::postag::{propagate_tags, tag_words, Lexicon, PosTag};
use crate::saliency::{explain, minmax_normalize, ExplainConfig};
use crate::tokenize::{Method, TokenizedSample, Vocab};

pub const PRSALM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrSalMRecord {
    pub id: String,
    pub dataset_name: String,
    pub tokenizer: Method,
    pub task: Task,
    pub label: usize,
    pub predicted: usize,
    pub tokens: Vec<String>,
    pub pos: Vec<PosTag>,
    pub position_ratio: Vec<f64>,
    pub frequency: Vec<u64>,
    pub saliency_raw: Vec<f64>,
    pub saliency_norm: Vec<f64>,
    pub degenerate: bool,
}

impl PrSalMRecord {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub id: String,
    pub split: SplitName,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrSalMManifest {
    pub prsalm_version: u32,
    pub dataset_name: String,
    pub source_corpus: String,
    pub checkpoint_sha256: String,
    pub tokenizer: Method,
    pub saliency: ExplainConfig,
    pub seed: u64,
    pub counts: SplitCounts,
    pub skipped: Vec<SkippedSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrSalMSplit {
    pub manifest: PrSalMManifest,
    pub train: Vec<PrSalMRecord>,
    pub val: Vec<PrSalMRecord>,
    pub test: Vec<PrSalMRecord>,
}

impl PrSalMSplit {
    pub fn split(&self, which: SplitName) -> &[PrSalMRecord] {
        match which {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn iter_all(&self) -> impl Iterator<Item = &PrSalMRecord> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Where a PrSalM build comes from; recorded verbatim in the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct PrSalMSource {
    pub source_corpus: String,
    pub checkpoint_sha256: String,
    pub saliency: ExplainConfig,
}

/// Per-piece properties of one tokenized sample, restricted to analyzable
/// pieces: tokens, POS, 1-based position ratio and training frequency.
pub fn annotate(
    sample: &TokenizedSample,
    lexicon: &Lexicon,
    freq: &FrequencyTable,
) -> Result<(Vec<String>, Vec<PosTag>, Vec<f64>, Vec<u64>)> {
    let word_tags = tag_words(&sample.words, lexicon);
    let piece_tags = propagate_tags(&word_tags, &sample.word_of)?;
    let idx = sample.analyzable_indices();
    let m = idx.len();
    let tokens: Vec<String> = idx.iter().map(|&i| sample.pieces[i].clone()).collect();
    let pos = idx.iter().map(|&i| piece_tags[i]).collect();
    let ratio = (1..=m).map(|k| k as f64 / m as f64).collect();
    let frequency = tokens.iter().map(|t| freq.get(t)).collect();
    Ok((tokens, pos, ratio, frequency))
}

fn build_record<B: BlackBox + ?Sized>(
    split: &CorpusSplit,
    index: usize,
    sample: &crate::corpus::LabeledText,
    ctx: &BuildCtx<'_, B>,
) -> Result<PrSalMRecord> {
    let tokens = sample.tokenize(ctx.vocab);
    if tokens.num_analyzable() == 0 {
        return Err(Error::validation("no analyzable tokens"));
    }
    let (pieces, pos, position_ratio, frequency) = annotate(&tokens, ctx.lexicon, &ctx.freq)?;
    let predicted = argmax(&ctx.model.predict(&tokens.ids)?);
    let cfg = ExplainConfig {
        seed: derive_seed(ctx.seed, index as u64),
        ..ctx.saliency
    };
    let sv = explain(ctx.model, &tokens, &sample.id, sample.label, &cfg)?;
    Ok(PrSalMRecord {
        id: sample.id.clone(),
        dataset_name: split.name.clone(),
        tokenizer: ctx.vocab.method(),
        task: sample.task,
        label: sample.label,
        predicted,
        tokens: pieces,
        pos,
        position_ratio,
        frequency,
        saliency_raw: sv.raw,
        saliency_norm: sv.norm,
        degenerate: sv.degenerate,
    })
}

struct BuildCtx<'a, B: BlackBox + ?Sized> {
    vocab: &'a Vocab,
    lexicon: &'a Lexicon,
    model: &'a B,
    freq: FrequencyTable,
    saliency: ExplainConfig,
    seed: u64,
}

/// Builds PrSalM from a corpus and a trained black box. Saliency is taken
/// toward each sample's true label. Samples whose saliency fails are
/// skipped, logged, and listed in the manifest.
pub fn build_prsalm<B: BlackBox + ?Sized>(
    corpus: &CorpusSplit,
    vocab: &Vocab,
    lexicon: &Lexicon,
    model: &B,
    source: &PrSalMSource,
    seed: u64,
) -> Result<PrSalMSplit> {
    corpus.validate()?;
    let train_tokens: Vec<TokenizedSample> = corpus.train.iter().map(|s| s.tokenize(vocab)).collect();
    let ctx = BuildCtx {
        vocab,
        lexicon,
        model,
        freq: build_frequency_table(&train_tokens)?,
        saliency: source.saliency,
        seed,
    };
    let all: Vec<(usize, SplitName, &crate::corpus::LabeledText)> = corpus
        .iter_all()
        .enumerate()
        .map(|(i, (name, s))| (i, name, s))
        .collect();
    let built: Vec<Result<PrSalMRecord>> = all
        .par_iter()
        .map(|(i, _, s)| build_record(corpus, *i, s, &ctx))
        .collect();

    let mut out = PrSalMSplit {
        manifest: PrSalMManifest {
            prsalm_version: PRSALM_VERSION,
            dataset_name: corpus.name.clone(),
            source_corpus: source.source_corpus.clone(),
            checkpoint_sha256: source.checkpoint_sha256.clone(),
            tokenizer: vocab.method(),
            saliency: source.saliency,
            seed,
            counts: SplitCounts::default(),
            skipped: Vec::new(),
        },
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for ((_, name, sample), rec) in all.into_iter().zip(built) {
        match rec {
            Ok(r) => match name {
                SplitName::Train => out.train.push(r),
                SplitName::Val => out.val.push(r),
                SplitName::Test => out.test.push(r),
            },
            Err(e) if e.is_validation() || matches!(e, Error::Capacity(_) | Error::NonFinite(_)) => {
                log::warn!("skipping sample {}: {e}", sample.id);
                out.manifest.skipped.push(SkippedSample {
                    id: sample.id.clone(),
                    split: name,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    out.manifest.counts = SplitCounts {
        train: out.train.len(),
        val: out.val.len(),
        test: out.test.len(),
    };
    log::info!(
        "built PrSalM {}: {} records, {} skipped",
        out.manifest.dataset_name,
        out.len(),
        out.manifest.skipped.len()
    );
    Ok(out)
}

/// Checks every record invariant; returns one message per violation.
pub fn validate_record(record: &PrSalMRecord) -> Vec<String> {
    let mut v = Vec::new();
    let n = record.tokens.len();
    if n == 0 {
        v.push("tokens: empty".to_string());
    }
    for (field, len) in [
        ("pos", record.pos.len()),
        ("position_ratio", record.position_ratio.len()),
        ("frequency", record.frequency.len()),
        ("saliency_raw", record.saliency_raw.len()),
        ("saliency_norm", record.saliency_norm.len()),
    ] {
        if len != n {
            v.push(format!("{field}: length {len} but {n} tokens"));
        }
    }
    if record
        .tokens
        .iter()
        .any(|t| crate::tokenize::SPECIAL_TOKENS.contains(&t.as_str()))
    {
        v.push("tokens: contains a special token".to_string());
    }
    if record.position_ratio.len() == n {
        for (k, r) in record.position_ratio.iter().enumerate() {
            if (r - (k + 1) as f64 / n as f64).abs() > 1e-12 {
                v.push(format!("position_ratio: entry {k} is {r}, expected {}/{n}", k + 1));
                break;
            }
        }
    }
    if record.saliency_norm.iter().any(|x| !(0.0..=1.0).contains(x)) {
        v.push("saliency_norm: value outside [0, 1]".to_string());
    }
    if !record.saliency_raw.is_empty() && record.saliency_raw.len() == record.saliency_norm.len() {
        match minmax_normalize(&record.saliency_raw) {
            Ok((norm, degenerate)) => {
                if degenerate != record.degenerate {
                    v.push(format!(
                        "degenerate: flag {} but min-max says {degenerate}",
                        record.degenerate
                    ));
                }
                if norm
                    .iter()
                    .zip(&record.saliency_norm)
                    .any(|(a, b)| (a - b).abs() > 1e-9)
                {
                    v.push("saliency_norm: does not equal min-max scaling of saliency_raw".to_string());
                }
            }
            Err(e) => v.push(format!("saliency_raw: {e}")),
        }
    }
    v
}

fn validate_split(split: &PrSalMSplit) -> Result<()> {
    let mut seen = HashSet::new();
    for r in split.iter_all() {
        let violations = validate_record(r);
        if !violations.is_empty() {
            return Err(Error::validation(format!("record {}: {}", r.id, violations.join("; "))));
        }
        if !seen.insert(r.id.as_str()) {
            return Err(Error::validation(format!("record id {} appears more than once", r.id)));
        }
    }
    let c = split.manifest.counts;
    if (c.train, c.val, c.test) != (split.train.len(), split.val.len(), split.test.len()) {
        return Err(Error::validation("manifest counts do not match the record lists"));
    }
    Ok(())
}

pub fn write_prsalm<W: Write>(split: &PrSalMSplit, mut out: W) -> Result<()> {
    validate_split(split)?;
    serde_json::to_writer(&mut out, &split.manifest)?;
    out.write_all(b"\n")?;
    for r in split.iter_all() {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_prsalm(split: &PrSalMSplit, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_prsalm(split, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// A loaded dataset plus any warnings raised while reading it.
#[derive(Debug, Clone)]
pub struct LoadedPrSalM {
    pub split: PrSalMSplit,
    pub warnings: Vec<String>,
}

/// Reads and validates a PrSalM file. If `checkpoint_sha256` is given and
/// differs from the manifest, a warning is returned (and logged).
pub fn read_prsalm<R: BufRead>(input: R, checkpoint_sha256: Option<&str>) -> Result<LoadedPrSalM> {
    let mut lines = input.lines();
    let first = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file, expected manifest".into(),
    })??;
    let header: serde_json::Value = serde_json::from_str(&first).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("manifest: {e}"),
    })?;
    match header.get("prsalm_version").and_then(|v| v.as_u64()) {
        Some(v) if v == PRSALM_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::validation(format!(
                "prsalm_version {v} is not supported (expected {PRSALM_VERSION})"
            )))
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "manifest lacks prsalm_version".into(),
            })
        }
    }
    let manifest: PrSalMManifest = serde_json::from_value(header).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("manifest: {e}"),
    })?;

    let c = manifest.counts;
    let expected = c.train + c.val + c.test;
    let mut records = Vec::with_capacity(expected);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PrSalMRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        records.push(rec);
    }
    if records.len() != expected {
        return Err(Error::Parse {
            line: records.len() + 2,
            msg: format!(
                "manifest declares {expected} records but the file holds {}",
                records.len()
            ),
        });
    }
    let test = records.split_off(c.train + c.val);
    let val = records.split_off(c.train);
    let split = PrSalMSplit {
        manifest,
        train: records,
        val,
        test,
    };
    validate_split(&split)?;

    let mut warnings = Vec::new();
    if let Some(hash) = checkpoint_sha256 {
        if hash != split.manifest.checkpoint_sha256 {
            let w = format!(
                "checkpoint hash mismatch: dataset was built with {}, given {hash}",
                split.manifest.checkpoint_sha256
            );
            log::warn!("{w}");
            warnings.push(w);
        }
    }
    Ok(LoadedPrSalM { split, warnings })
}

pub fn load_prsalm(path: &Path, checkpoint_sha256: Option<&str>) -> Result<LoadedPrSalM> {
    read_prsalm(BufReader::new(fs::File::open(path)?), checkpoint_sha256)
}
