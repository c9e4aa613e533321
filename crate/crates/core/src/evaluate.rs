//! Grouped top-θ overlap against SHAP, and token heat-map rendering.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::saliency::top_theta;

/// Raw saliencies of one sample under the three methods, aligned by token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSaliencies {
    pub id: String,
    pub shap: Vec<f64>,
    pub masking: Vec<f64>,
    pub s2s: Vec<f64>,
}

/// Size of the intersection of the two top-θ index sets.
pub fn overlap(a: &[f64], b: &[f64], theta: f64) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "saliency lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let ta = top_theta(a, theta)?;
    let tb = top_theta(b, theta)?;
    Ok(ta.iter().filter(|i| tb.binary_search(i).is_ok()).count())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupOverlap {
    pub group: usize,
    pub masking_vs_shap: f64,
    pub s2s_vs_shap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub theta: f64,
    pub group_size: usize,
    pub n_groups: usize,
    pub shuffle_seed: Option<u64>,
    pub groups: Vec<GroupOverlap>,
    pub mean_masking_vs_shap: f64,
    pub mean_s2s_vs_shap: f64,
    /// Groups where the S2S overlap is strictly larger.
    pub s2s_wins: usize,
}

impl OverlapReport {
    pub fn to_table(&self) -> String {
        let mut s = String::from("group  masking/shap  s2s/shap\n");
        for g in &self.groups {
            writeln!(s, "{:>5}  {:>12.3}  {:>8.3}", g.group, g.masking_vs_shap, g.s2s_vs_shap).unwrap();
        }
        writeln!(
            s,
            " mean  {:>12.3}  {:>8.3}   (s2s ahead in {}/{} groups)",
            self.mean_masking_vs_shap, self.mean_s2s_vs_shap, self.s2s_wins, self.n_groups
        )
        .unwrap();
        s
    }
}

/// Splits the first `n_groups * group_size` samples (optionally shuffled
/// first) into consecutive groups and averages the per-sample overlaps of
/// masking and S2S with SHAP.
pub fn overlap_eval(
    samples: &[MethodSaliencies],
    n_groups: usize,
    group_size: usize,
    theta: f64,
    shuffle_seed: Option<u64>,
) -> Result<OverlapReport> {
    let needed = n_groups * group_size;
    if needed == 0 {
        return Err(Error::validation("n_groups and group_size must be positive"));
    }
    if samples.len() < needed {
        return Err(Error::validation(format!(
            "overlap evaluation needs {needed} samples ({n_groups} groups x {group_size}), got {}",
            samples.len()
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut groups = Vec::with_capacity(n_groups);
    for (g, chunk) in order[..needed].chunks(group_size).enumerate() {
        let (mut m, mut s) = (0usize, 0usize);
        for &i in chunk {
            let x = &samples[i];
            m += overlap(&x.masking, &x.shap, theta)?;
            s += overlap(&x.s2s, &x.shap, theta)?;
        }
        groups.push(GroupOverlap {
            group: g,
            masking_vs_shap: m as f64 / group_size as f64,
            s2s_vs_shap: s as f64 / group_size as f64,
        });
    }
    let mean = |f: fn(&GroupOverlap) -> f64| groups.iter().map(f).sum::<f64>() / n_groups as f64;
    Ok(OverlapReport {
        theta,
        group_size,
        n_groups,
        shuffle_seed,
        mean_masking_vs_shap: mean(|g| g.masking_vs_shap),
        mean_s2s_vs_shap: mean(|g| g.s2s_vs_shap),
        s2s_wins: groups.iter().filter(|g| g.s2s_vs_shap > g.masking_vs_shap).count(),
        groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatMap {
    pub tokens: Vec<String>,
    pub intensities: Vec<f64>,
    pub label: Option<String>,
}

impl HeatMap {
    pub fn new(tokens: Vec<String>, intensities: Vec<f64>, label: Option<String>) -> Result<Self> {
        if tokens.len() != intensities.len() {
            return Err(Error::shape(format!(
                "{} tokens but {} intensities",
                tokens.len(),
                intensities.len()
            )));
        }
        if let Some(v) = intensities.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            tokens,
            intensities,
            label,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Html,
    Ansi,
}

impl std::str::FromStr for RenderFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "html" => Ok(RenderFormat::Html),
            "ansi" => Ok(RenderFormat::Ansi),
            other => Err(Error::validation(format!("unknown render format `{other}`"))),
        }
    }
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

// xterm-256 backgrounds from pale to deep orange; bucket 0 is unshaded
const ANSI_SHADES: [Option<u8>; 5] = [None, Some(230), Some(223), Some(215), Some(208)];

fn bucket(v: f64) -> usize {
    ((v * 5.0).floor() as usize).min(4)
}

pub fn render_heatmap(map: &HeatMap, format: RenderFormat) -> String {
    match format {
        RenderFormat::Html => {
            let mut s = String::from(
                "<!DOCTYPE html>\n<html>\n<head><meta charset=\"utf-8\"><title>saliency heat map</title></head>\n<body>\n",
            );
            if let Some(label) = &map.label {
                writeln!(s, "<p>label: {}</p>", escape_html(label)).unwrap();
            }
            s.push_str("<p>");
            for (i, (tok, v)) in map.tokens.iter().zip(&map.intensities).enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                write!(
                    s,
                    "<span style=\"background-color: rgba(255,165,0,{v:.3})\">{}</span>",
                    escape_html(tok)
                )
                .unwrap();
            }
            s.push_str("</p>\n</body>\n</html>\n");
            s
        }
        RenderFormat::Ansi => {
            let mut s = String::new();
            if let Some(label) = &map.label {
                writeln!(s, "[{label}]").unwrap();
            }
            for (i, (tok, v)) in map.tokens.iter().zip(&map.intensities).enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                match ANSI_SHADES[bucket(*v)] {
                    Some(c) => write!(s, "\x1b[48;5;{c}m\x1b[30m{tok}\x1b[0m").unwrap(),
                    None => s.push_str(tok),
                }
            }
            s.push('\n');
            s
        }
    }
}
