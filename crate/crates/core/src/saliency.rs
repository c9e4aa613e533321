//! Per-token saliency: exact Shapley values by enumeration, Kernel SHAP, and
//! single-token `[UNK]` occlusion, plus min-max scaling and top-θ selection.
//!
//! Only analyzable (non-special) pieces are players. A coalition keeps its
//! members and replaces every other analyzable piece with `[MASK]`; the
//! occlusion baseline replaces one piece at a time with `[UNK]`.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::BlackBox;
use crate::error::{Error, Result};
use crate::tokenize::{TokenizedSample, MASK_ID, UNK_ID};

/// Largest player count accepted by [`shapley_exact`] (2^14 model calls).
pub const MAX_EXACT_PLAYERS: usize = 14;

const RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencyMethod {
    ShapExact,
    ShapSampled,
    Masking,
    Seq2saliency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyVector {
    #[serde(rename = "id")]
    pub sample_id: String,
    pub method: SaliencyMethod,
    #[serde(rename = "target")]
    pub target_class: usize,
    /// Additive baseline (prediction with every analyzable token masked);
    /// only set by the SHAP methods.
    pub base_value: Option<f64>,
    pub raw: Vec<f64>,
    pub norm: Vec<f64>,
    #[serde(rename = "degenerate_flag")]
    pub degenerate: bool,
    /// Set when the least-squares solve needed the ridge fallback.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub solver_warning: bool,
}

impl SaliencyVector {
    pub fn new(
        sample_id: impl Into<String>,
        method: SaliencyMethod,
        target_class: usize,
        raw: Vec<f64>,
        base_value: Option<f64>,
    ) -> Result<Self> {
        let (norm, degenerate) = minmax_normalize(&raw)?;
        Ok(Self {
            sample_id: sample_id.into(),
            method,
            target_class,
            base_value,
            raw,
            norm,
            degenerate,
            solver_warning: false,
        })
    }
}

pub fn write_jsonl<W: Write>(vectors: &[SaliencyVector], mut out: W) -> Result<()> {
    for v in vectors {
        serde_json::to_writer(&mut out, v)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// A set of present players with its regression weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Coalition {
    pub mask: Vec<bool>,
    pub weight: f64,
}

/// Replaces every analyzable piece whose mask bit is `false` by
/// `replacement`; special pieces are never touched.
pub fn mask_apply(sample: &TokenizedSample, present: &[bool], replacement: u32) -> Result<Vec<u32>> {
    let analyzable = sample.analyzable_indices();
    if present.len() != analyzable.len() {
        return Err(Error::validation(format!(
            "mask has {} entries but the sample has {} analyzable tokens",
            present.len(),
            analyzable.len()
        )));
    }
    let mut ids = sample.ids.clone();
    for (&pos, &keep) in analyzable.iter().zip(present) {
        if !keep {
            ids[pos] = replacement;
        }
    }
    Ok(ids)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight `(M-1) / (C(M,s) s (M-s))` of a coalition of size
/// `s` among `m` players.
pub fn shapley_kernel_weight(m: usize, s: usize) -> f64 {
    assert!(s > 0 && s < m, "kernel weight is only finite for 0 < s < M");
    (m - 1) as f64 / (binomial(m, s) * s as f64 * (m - s) as f64)
}

/// Exact Shapley values of a game given as a value table indexed by
/// coalition bitmask (bit `i` set means player `i` present).
pub fn shapley_values(m: usize, values: &[f64]) -> Result<Vec<f64>> {
    if values.len() != 1usize << m {
        return Err(Error::validation(format!(
            "value table for {m} players needs {} entries, got {}",
            1usize << m,
            values.len()
        )));
    }
    // weight of a coalition S not containing i: |S|! (M-|S|-1)! / M!
    let weights: Vec<f64> = (0..m).map(|s| 1.0 / (m as f64 * binomial(m - 1, s))).collect();
    let mut phi = vec![0.0; m];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for s in 0..values.len() {
            if s & bit == 0 {
                acc += weights[s.count_ones() as usize] * (values[s | bit] - values[s]);
            }
        }
        *p = acc;
    }
    Ok(phi)
}

fn bits_to_mask(bits: usize, m: usize) -> Vec<bool> {
    (0..m).map(|i| bits & (1 << i) != 0).collect()
}

fn target_value<B: BlackBox + ?Sized>(model: &B, target: usize) -> impl Fn(&[Vec<u32>]) -> Result<Vec<f64>> + '_ {
    move |batch| {
        model
            .predict_batch(batch)?
            .into_iter()
            .map(|p| {
                p.get(target)
                    .copied()
                    .ok_or_else(|| Error::validation(format!("target class {target} outside model output")))
            })
            .collect()
    }
}

fn check_target<B: BlackBox + ?Sized>(model: &B, target: usize) -> Result<()> {
    if target >= model.num_classes() {
        return Err(Error::validation(format!(
            "target class {target} but the model has {} classes",
            model.num_classes()
        )));
    }
    Ok(())
}

/// Exact Shapley values by evaluating all `2^M` coalitions.
pub fn shapley_exact<B: BlackBox + ?Sized>(
    model: &B,
    sample: &TokenizedSample,
    sample_id: &str,
    target: usize,
) -> Result<SaliencyVector> {
    check_target(model, target)?;
    let m = sample.num_analyzable();
    if m == 0 {
        return Err(Error::validation("sample has no analyzable tokens"));
    }
    if m > MAX_EXACT_PLAYERS {
        return Err(Error::Capacity(format!(
            "{m} tokens need 2^{m} model calls; exact enumeration is limited to {MAX_EXACT_PLAYERS}, use shap_sampled"
        )));
    }
    let batch = (0..1usize << m)
        .map(|bits| mask_apply(sample, &bits_to_mask(bits, m), MASK_ID))
        .collect::<Result<Vec<_>>>()?;
    let values = target_value(model, target)(&batch)?;
    let phi = shapley_values(m, &values)?;
    SaliencyVector::new(sample_id, SaliencyMethod::ShapExact, target, phi, Some(values[0]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelShapResult {
    pub phi: Vec<f64>,
    pub base_value: f64,
    pub full_value: f64,
    /// Distinct coalitions evaluated, including the empty and full ones.
    pub evaluations: usize,
    pub enumerated: bool,
    pub ridge_fallback: bool,
}

/// Default coalition budget: full enumeration when it is cheap, otherwise
/// `2M + 2048` samples.
pub fn default_budget(m: usize) -> usize {
    let all = if m >= 63 { usize::MAX } else { (1usize << m) - 2 };
    all.min(2 * m + 2048)
}

/// Kernel SHAP over `m` players.
///
/// The empty and full coalitions are always evaluated and enter as the
/// efficiency constraint `sum(phi) = v(full) - v(empty)`. With a budget of at
/// least `2^M - 2` every other coalition is enumerated with its exact kernel
/// weight, which reproduces the Shapley values. Otherwise coalition sizes are
/// drawn with probability proportional to `C(M,s) * kernel(s)`, a uniform
/// subset of that size is taken together with its complement, and repeated
/// draws accumulate weight.
///
/// `eval` receives batches of presence masks and returns their values.
pub fn kernel_shap<F>(m: usize, n_coalitions: usize, seed: u64, eval: F) -> Result<KernelShapResult>
where
    F: Fn(&[Vec<bool>]) -> Result<Vec<f64>>,
{
    kernel_shap_impl(m, n_coalitions, seed, true, eval)
}

/// Like [`kernel_shap`] but always samples, even when the budget would
/// allow enumeration.
pub fn kernel_shap_sampling<F>(m: usize, n_coalitions: usize, seed: u64, eval: F) -> Result<KernelShapResult>
where
    F: Fn(&[Vec<bool>]) -> Result<Vec<f64>>,
{
    kernel_shap_impl(m, n_coalitions, seed, false, eval)
}

fn kernel_shap_impl<F>(
    m: usize,
    n_coalitions: usize,
    seed: u64,
    allow_enumeration: bool,
    eval: F,
) -> Result<KernelShapResult>
where
    F: Fn(&[Vec<bool>]) -> Result<Vec<f64>>,
{
    if m == 0 {
        return Err(Error::validation("kernel SHAP needs at least one player"));
    }
    let ends = eval(&[vec![false; m], vec![true; m]])?;
    let (base, full) = (ends[0], ends[1]);
    if m == 1 {
        return Ok(KernelShapResult {
            phi: vec![full - base],
            base_value: base,
            full_value: full,
            evaluations: 2,
            enumerated: true,
            ridge_fallback: false,
        });
    }

    let enumerate = allow_enumeration && m < 63 && n_coalitions >= (1usize << m) - 2;
    let coalitions: Vec<Coalition> = if enumerate {
        (1..(1usize << m) - 1)
            .map(|bits| Coalition {
                mask: bits_to_mask(bits, m),
                weight: shapley_kernel_weight(m, bits.count_ones() as usize),
            })
            .collect()
    } else {
        sample_coalitions(m, n_coalitions, seed)
    };

    let masks: Vec<Vec<bool>> = coalitions.iter().map(|c| c.mask.clone()).collect();
    let values = eval(&masks)?;

    // eliminate the last player through the efficiency constraint
    let last = m - 1;
    let delta = full - base;
    let mut a = DMatrix::<f64>::zeros(last, last);
    let mut b = DVector::<f64>::zeros(last);
    let mut x = vec![0.0; last];
    for (c, v) in coalitions.iter().zip(&values) {
        let z_last = if c.mask[last] { 1.0 } else { 0.0 };
        let y = v - base - z_last * delta;
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = (if c.mask[j] { 1.0 } else { 0.0 }) - z_last;
        }
        for j in 0..last {
            if x[j] == 0.0 {
                continue;
            }
            b[j] += c.weight * x[j] * y;
            for k in 0..last {
                a[(j, k)] += c.weight * x[j] * x[k];
            }
        }
    }
    let (solution, ridge_fallback) = match a.clone().cholesky() {
        Some(ch) => (ch.solve(&b), false),
        None => {
            let ridged = a + DMatrix::<f64>::identity(last, last) * RIDGE;
            let sol = match ridged.clone().cholesky() {
                Some(ch) => ch.solve(&b),
                None => ridged
                    .lu()
                    .solve(&b)
                    .ok_or_else(|| Error::NonFinite("kernel SHAP normal equations".into()))?,
            };
            (sol, true)
        }
    };
    let mut phi: Vec<f64> = solution.iter().copied().collect();
    phi.push(delta - phi.iter().sum::<f64>());
    if phi.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("kernel SHAP solution".into()));
    }
    Ok(KernelShapResult {
        phi,
        base_value: base,
        full_value: full,
        evaluations: coalitions.len() + 2,
        enumerated: enumerate,
        ridge_fallback,
    })
}

fn sample_coalitions(m: usize, n_coalitions: usize, seed: u64) -> Vec<Coalition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // P(size = s) proportional to C(M,s) * kernel(s) = (M-1) / (s (M-s))
    let size_w: Vec<f64> = (1..m).map(|s| 1.0 / (s * (m - s)) as f64).collect();
    let total: f64 = size_w.iter().sum();
    let mut counts: BTreeMap<Vec<bool>, f64> = BTreeMap::new();
    let mut drawn = 0;
    while drawn < n_coalitions.max(2) {
        let mut u = rng.gen::<f64>() * total;
        let mut size = m - 1;
        for (i, w) in size_w.iter().enumerate() {
            if u < *w {
                size = i + 1;
                break;
            }
            u -= w;
        }
        let mut mask = vec![false; m];
        for i in sample_indices(&mut rng, m, size) {
            mask[i] = true;
        }
        let complement: Vec<bool> = mask.iter().map(|b| !b).collect();
        *counts.entry(mask).or_insert(0.0) += 1.0;
        *counts.entry(complement).or_insert(0.0) += 1.0;
        drawn += 2;
    }
    counts
        .into_iter()
        .map(|(mask, weight)| Coalition { mask, weight })
        .collect()
}

/// Kernel SHAP against a black box; see [`kernel_shap`].
pub fn shap_sampled<B: BlackBox + ?Sized>(
    model: &B,
    sample: &TokenizedSample,
    sample_id: &str,
    target: usize,
    n_coalitions: usize,
    seed: u64,
) -> Result<SaliencyVector> {
    check_target(model, target)?;
    let m = sample.num_analyzable();
    let value = target_value(model, target);
    let result = kernel_shap(m, n_coalitions, seed, |masks| {
        let batch = masks
            .iter()
            .map(|mask| mask_apply(sample, mask, MASK_ID))
            .collect::<Result<Vec<_>>>()?;
        value(&batch)
    })?;
    if result.ridge_fallback {
        log::warn!("sample {sample_id}: singular kernel SHAP system, used ridge fallback");
    }
    let mut v = SaliencyVector::new(
        sample_id,
        SaliencyMethod::ShapSampled,
        target,
        result.phi,
        Some(result.base_value),
    )?;
    v.solver_warning = result.ridge_fallback;
    Ok(v)
}

/// Occlusion saliency: `p(original)[target] - p(token i -> [UNK])[target]`.
/// Makes exactly `M + 1` model calls.
pub fn masking_saliency<B: BlackBox + ?Sized>(
    model: &B,
    sample: &TokenizedSample,
    sample_id: &str,
    target: usize,
) -> Result<SaliencyVector> {
    check_target(model, target)?;
    let m = sample.num_analyzable();
    if m == 0 {
        return Err(Error::validation("sample has no analyzable tokens"));
    }
    let mut batch = vec![sample.ids.clone()];
    for i in 0..m {
        let mut present = vec![true; m];
        present[i] = false;
        batch.push(mask_apply(sample, &present, UNK_ID)?);
    }
    let values = target_value(model, target)(&batch)?;
    let raw = values[1..].iter().map(|v| values[0] - v).collect();
    SaliencyVector::new(sample_id, SaliencyMethod::Masking, target, raw, None)
}

/// Which black-box explainer to run and with what budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub method: SaliencyMethod,
    /// Coalition budget for `shap_sampled`; `None` uses [`default_budget`].
    pub budget: Option<usize>,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            method: SaliencyMethod::ShapSampled,
            budget: None,
            seed: 0,
        }
    }
}

pub fn explain<B: BlackBox + ?Sized>(
    model: &B,
    sample: &TokenizedSample,
    sample_id: &str,
    target: usize,
    cfg: &ExplainConfig,
) -> Result<SaliencyVector> {
    match cfg.method {
        SaliencyMethod::ShapExact => shapley_exact(model, sample, sample_id, target),
        SaliencyMethod::ShapSampled => {
            let budget = cfg.budget.unwrap_or_else(|| default_budget(sample.num_analyzable()));
            shap_sampled(model, sample, sample_id, target, budget, cfg.seed)
        }
        SaliencyMethod::Masking => masking_saliency(model, sample, sample_id, target),
        SaliencyMethod::Seq2saliency => Err(Error::validation(
            "seq2saliency is not a black-box explainer; use s2s_predict",
        )),
    }
}

/// Per-sample min-max scaling to `[0, 1]`. A constant input (including a
/// single value) maps to all `0.5` and is reported as degenerate.
pub fn minmax_normalize(raw: &[f64]) -> Result<(Vec<f64>, bool)> {
    if raw.is_empty() {
        return Err(Error::validation("cannot normalize an empty saliency vector"));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("saliency values".into()));
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range == 0.0 {
        return Ok((vec![0.5; raw.len()], true));
    }
    Ok((raw.iter().map(|v| (v - min) / range).collect(), false))
}

/// Number of tokens in a top-θ set: `ceil(θ M)`, with a small tolerance so
/// that e.g. `0.3 * 10` counts as exactly 3.
pub fn top_k_count(m: usize, theta: f64) -> usize {
    ((theta * m as f64 - 1e-9).ceil().max(1.0) as usize).min(m)
}

/// The `ceil(θ M)` indices with the largest values, returned in ascending
/// index order. Ties go to the smaller index.
pub fn top_theta(values: &[f64], theta: f64) -> Result<Vec<usize>> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::validation(format!("theta {theta} outside (0, 1]")));
    }
    if values.is_empty() {
        return Ok(Vec::new());
    }
    Ok(top_k(values, top_k_count(values.len(), theta)))
}

pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut top: Vec<usize> = order.into_iter().take(k).collect();
    top.sort_unstable();
    top
}

/// Sums piece saliencies into their source words (specials are skipped).
pub fn word_level(raw: &[f64], sample: &TokenizedSample) -> Result<Vec<f64>> {
    let words: Vec<usize> = sample.word_of.iter().flatten().copied().collect();
    if words.len() != raw.len() {
        return Err(Error::validation(
            "saliency length does not match the analyzable pieces",
        ));
    }
    let mut out = vec![0.0; sample.words.len()];
    for (w, v) in words.into_iter().zip(raw) {
        out[w] += v;
    }
    Ok(out)
}
