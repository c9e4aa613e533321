//! Property/saliency statistics over PrSalM records: which POS land in the
//! top-θ saliency set, where in the sample they sit, and how frequent they
//! are.
//!
//! Top-θ sets are always taken over `saliency_raw` with the ranking rule of
//! [`top_theta`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postag::PosTag;
use crate::prsalm::PrSalMRecord;
use crate::saliency::top_theta;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PositionMode {
    Theta(f64),
    All,
}

impl PositionMode {
    pub fn key(&self) -> String {
        match self {
            PositionMode::Theta(t) => format!("{t}"),
            PositionMode::All => "ALL".to_string(),
        }
    }
}

fn non_empty(records: &[PrSalMRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::validation("analysis needs at least one record"));
    }
    Ok(())
}

fn selected(record: &PrSalMRecord, mode: PositionMode) -> Result<Vec<usize>> {
    match mode {
        PositionMode::Theta(t) => top_theta(&record.saliency_raw, t),
        PositionMode::All => Ok((0..record.len()).collect()),
    }
}

/// Mean number of top-θ tokens per sample, by POS. Tags that never appear
/// in a top set are omitted.
pub fn pos_histogram(records: &[PrSalMRecord], theta: f64) -> Result<BTreeMap<PosTag, f64>> {
    non_empty(records)?;
    let mut counts: BTreeMap<PosTag, usize> = BTreeMap::new();
    for r in records {
        for i in top_theta(&r.saliency_raw, theta)? {
            *counts.entry(r.pos[i]).or_insert(0) += 1;
        }
    }
    let n = records.len() as f64;
    Ok(counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect())
}

/// Mean position ratio over the pooled top-θ tokens of all samples.
pub fn position_mean(records: &[PrSalMRecord], theta: f64) -> Result<f64> {
    non_empty(records)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for r in records {
        for i in top_theta(&r.saliency_raw, theta)? {
            sum += r.position_ratio[i];
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Mean position ratio of tokens tagged `pos`, within top-θ sets or over all
/// tokens. `None` when no token qualifies.
pub fn per_pos_position(records: &[PrSalMRecord], pos: PosTag, mode: PositionMode) -> Result<Option<f64>> {
    let (mut sum, mut count) = (0.0, 0usize);
    for r in records {
        for i in selected(r, mode)? {
            if r.pos[i] == pos {
                sum += r.position_ratio[i];
                count += 1;
            }
        }
    }
    Ok((count > 0).then(|| sum / count as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyStats {
    pub top: Option<Summary>,
    pub all: Option<Summary>,
}

/// Mean and lower-middle median of a list of frequencies.
pub fn summarize(values: &[u64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let mean = sorted.iter().map(|&v| v as f64).sum::<f64>() / sorted.len() as f64;
    Some(Summary {
        mean,
        median: sorted[(sorted.len() - 1) / 2],
    })
}

/// Training-split frequency of tokens tagged `pos`, within top-θ sets and
/// over all tokens. Frequencies come from the records themselves.
pub fn frequency_stats(records: &[PrSalMRecord], pos: PosTag, theta: f64) -> Result<FrequencyStats> {
    let mut top = Vec::new();
    let mut all = Vec::new();
    for r in records {
        let chosen = top_theta(&r.saliency_raw, theta)?;
        for i in 0..r.len() {
            if r.pos[i] == pos {
                all.push(r.frequency[i]);
                if chosen.binary_search(&i).is_ok() {
                    top.push(r.frequency[i]);
                }
            }
        }
    }
    Ok(FrequencyStats {
        top: summarize(&top),
        all: summarize(&all),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// θ for the POS histogram and frequency statistics.
    pub theta: f64,
    /// θ values for the overall position means.
    pub theta_grid: Vec<f64>,
    /// θ values for the per-POS position means (ALL is always added).
    pub per_pos_thetas: Vec<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            theta: 0.3,
            theta_grid: vec![0.1, 0.2, 0.3],
            per_pos_thetas: vec![0.1, 0.3],
        }
    }
}

/// All statistics in one document. Map keys are strings: POS tags, θ values
/// (`"0.3"`), and `"<POS>@<θ|ALL>"` for per-POS positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub n_records: usize,
    pub theta: f64,
    pub pos_histogram: BTreeMap<String, f64>,
    pub position_means: BTreeMap<String, f64>,
    pub per_pos_position: BTreeMap<String, Option<f64>>,
    pub frequency_stats: BTreeMap<String, FrequencyStats>,
}

pub fn analyze(records: &[PrSalMRecord], cfg: &AnalysisConfig) -> Result<AnalysisReport> {
    non_empty(records)?;
    let pos_histogram = pos_histogram(records, cfg.theta)?
        .into_iter()
        .map(|(k, v)| (k.as_str().to_string(), v))
        .collect();
    let mut position_means = BTreeMap::new();
    for &t in &cfg.theta_grid {
        position_means.insert(PositionMode::Theta(t).key(), position_mean(records, t)?);
    }
    let modes: Vec<PositionMode> = cfg
        .per_pos_thetas
        .iter()
        .map(|&t| PositionMode::Theta(t))
        .chain([PositionMode::All])
        .collect();
    let mut per_pos = BTreeMap::new();
    let mut freq = BTreeMap::new();
    for tag in PosTag::ALL {
        for mode in &modes {
            per_pos.insert(
                format!("{}@{}", tag.as_str(), mode.key()),
                per_pos_position(records, tag, *mode)?,
            );
        }
        freq.insert(tag.as_str().to_string(), frequency_stats(records, tag, cfg.theta)?);
    }
    Ok(AnalysisReport {
        n_records: records.len(),
        theta: cfg.theta,
        pos_histogram,
        position_means,
        per_pos_position: per_pos,
        frequency_stats: freq,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Writes one CSV per statistic into `dir`.
pub fn write_csvs(report: &AnalysisReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut s = String::from("pos,mean_count\n");
    for (k, v) in &report.pos_histogram {
        writeln!(s, "{k},{v}").unwrap();
    }
    fs::write(dir.join("pos_histogram.csv"), s)?;

    let mut s = String::from("theta,position_mean\n");
    for (k, v) in &report.position_means {
        writeln!(s, "{k},{v}").unwrap();
    }
    fs::write(dir.join("position_means.csv"), s)?;

    let mut s = String::from("pos,mode,position_mean\n");
    for (k, v) in &report.per_pos_position {
        let (pos, mode) = k.split_once('@').unwrap_or((k, ""));
        writeln!(s, "{pos},{mode},{}", opt(*v)).unwrap();
    }
    fs::write(dir.join("per_pos_position.csv"), s)?;

    let mut s = String::from("pos,top_mean,top_median,all_mean,all_median\n");
    for (k, f) in &report.frequency_stats {
        writeln!(
            s,
            "{k},{},{},{},{}",
            opt(f.top.map(|x| x.mean)),
            f.top.map(|x| x.median.to_string()).unwrap_or_default(),
            opt(f.all.map(|x| x.mean)),
            f.all.map(|x| x.median.to_string()).unwrap_or_default()
        )
        .unwrap();
    }
    fs::write(dir.join("frequency_stats.csv"), s)?;
    Ok(())
}
