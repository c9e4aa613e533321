//! Seq2Saliency: a per-token regressor from (token, POS, position) to
//! normalized saliency, trained on PrSalM with mean squared error. Once
//! trained it explains new samples without querying the classifier.
//!
//! `token_emb ++ pos_emb -> Linear -> + sinusoids -> encoder -> Linear(1)`

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::meta_path;
use crate::corpus::FrequencyTable;
use crate::error::{Error, Result};
use crate::nnkit::checkpoint::{decode_checkpoint, encode_checkpoint, restore};
use crate::nnkit::layers::{embed, embed_backward, sinusoidal_positions, Encoder, EncoderLayerCache, Linear};
use crate::nnkit::{adam_step, AdamConfig, AdamState, Params, Tensor};
use crate::postag::{Lexicon, PosTag};
use crate::prsalm::{annotate, PrSalMRecord, PrSalMSplit};
use crate::saliency::{SaliencyMethod, SaliencyVector};
use crate::tokenize::{TokenizedSample, Vocab};

/// Training losses: one sum per 200 consecutive training samples, and the
/// summed validation loss before training (epoch 0) and after each epoch.
pub const LOSS_CHUNK: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct S2SConfig {
    pub token_emb_dim: usize,
    pub pos_emb_dim: usize,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for S2SConfig {
    fn default() -> Self {
        Self {
            token_emb_dim: 64,
            pos_emb_dim: 16,
            model_dim: 64,
            layers: 3,
            heads: 4,
            ffn_dim: 128,
            max_len: 128,
            seed: 0,
            batch_size: 16,
            lr: 1e-3,
            epochs: 10,
        }
    }
}

impl S2SConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("token_emb_dim", self.token_emb_dim),
            ("pos_emb_dim", self.pos_emb_dim),
            ("model_dim", self.model_dim),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("max_len", self.max_len),
            ("batch_size", self.batch_size),
        ];
        for (field, v) in dims {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::config(
                "heads",
                format!("{} does not divide model_dim {}", self.heads, self.model_dim),
            ));
        }
        if self.model_dim % 2 != 0 {
            return Err(Error::config("model_dim", "must be even for the positional coding"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be a positive number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct S2SParams {
    pub config: S2SConfig,
    pub token_emb: Tensor,
    pub pos_emb: Tensor,
    pub input_proj: Linear,
    pub encoder: Encoder,
    pub head: Linear,
}

impl Params for S2SParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.token_emb"), &self.token_emb));
        out.push((format!("{prefix}.pos_emb"), &self.pos_emb));
        self.input_proj.collect(&format!("{prefix}.input_proj"), out);
        self.encoder.collect(&format!("{prefix}.encoder"), out);
        self.head.collect(&format!("{prefix}.head"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.token_emb"), &mut self.token_emb));
        out.push((format!("{prefix}.pos_emb"), &mut self.pos_emb));
        self.input_proj.collect_mut(&format!("{prefix}.input_proj"), out);
        self.encoder.collect_mut(&format!("{prefix}.encoder"), out);
        self.head.collect_mut(&format!("{prefix}.head"), out);
    }
}

pub struct S2SCache {
    ids: Vec<usize>,
    tags: Vec<usize>,
    concat: Tensor,
    encoder: Vec<EncoderLayerCache>,
    hidden: Tensor,
}

impl S2SParams {
    pub fn init(config: &S2SConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let input = config.token_emb_dim + config.pos_emb_dim;
        Ok(Self {
            config: config.clone(),
            token_emb: Tensor::uniform(&[vocab_size, config.token_emb_dim], 1.0, &mut rng),
            pos_emb: Tensor::uniform(&[PosTag::ALL.len(), config.pos_emb_dim], 1.0, &mut rng),
            input_proj: Linear::new(input, config.model_dim, true, &mut rng),
            encoder: Encoder::new(config.layers, config.model_dim, config.heads, config.ffn_dim, &mut rng)?,
            head: Linear::new(config.model_dim, 1, true, &mut rng),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.token_emb.rows()
    }

    pub fn forward(&self, ids: &[u32], pos: &[PosTag]) -> Result<(Vec<f64>, S2SCache)> {
        let n = ids.len();
        if n == 0 {
            return Err(Error::validation("empty input sequence"));
        }
        if pos.len() != n {
            return Err(Error::shape(format!("{n} tokens but {} POS tags", pos.len())));
        }
        if n > self.config.max_len {
            return Err(Error::validation(format!(
                "sequence of {n} tokens exceeds max_len {}",
                self.config.max_len
            )));
        }
        let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let tags: Vec<usize> = pos.iter().map(|t| t.index()).collect();
        let te = embed(&self.token_emb, &ids)?;
        let pe = embed(&self.pos_emb, &tags)?;
        let mut concat = Tensor::zeros(&[n, te.cols() + pe.cols()]);
        concat.set_col_slice(0, &te);
        concat.set_col_slice(te.cols(), &pe);
        let mut x = self.input_proj.forward(&concat)?;
        x.add_assign(&sinusoidal_positions(n, self.config.model_dim)?);
        let (hidden, encoder) = self.encoder.forward(&x)?;
        let out = self.head.forward(&hidden)?.into_data();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("seq2saliency output".into()));
        }
        Ok((
            out,
            S2SCache {
                ids,
                tags,
                concat,
                encoder,
                hidden,
            },
        ))
    }

    pub fn backward(&self, cache: &S2SCache, dout: &[f64]) -> Result<S2SParams> {
        let n = cache.ids.len();
        let mut grad = self.zeros_like();
        let dy = Tensor::from_vec(&[n, 1], dout.to_vec())?;
        let dh = self.head.backward(&cache.hidden, &dy, &mut grad.head);
        let dx = self.encoder.backward(&cache.encoder, &dh, &mut grad.encoder)?;
        let dconcat = self.input_proj.backward(&cache.concat, &dx, &mut grad.input_proj);
        let te = self.config.token_emb_dim;
        embed_backward(&mut grad.token_emb, &cache.ids, &dconcat.col_slice(0, te));
        embed_backward(
            &mut grad.pos_emb,
            &cache.tags,
            &dconcat.col_slice(te, self.config.pos_emb_dim),
        );
        Ok(grad)
    }

    /// MSE of one sample and its gradient.
    pub fn loss_and_grad(&self, ids: &[u32], pos: &[PosTag], target: &[f64]) -> Result<(f64, S2SParams)> {
        let (pred, cache) = self.forward(ids, pos)?;
        let (loss, dpred) = mse_loss_grad(&pred, target)?;
        Ok((loss, self.backward(&cache, &dpred)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_checkpoint(self)
    }

    pub fn from_bytes(bytes: &[u8], config: &S2SConfig) -> Result<Self> {
        let entries = decode_checkpoint(bytes)?;
        let vocab_size = entries
            .iter()
            .find(|(n, _)| n == "token_emb")
            .map(|(_, t)| t.rows())
            .ok_or_else(|| Error::validation("checkpoint has no token_emb tensor"))?;
        let mut params = Self::init(config, vocab_size)?;
        restore(&mut params, &entries)?;
        Ok(params)
    }

    pub fn save(&self, path: &Path, meta: &S2SMeta) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        fs::write(meta_path(path), serde_json::to_string_pretty(meta)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, S2SMeta)> {
        let meta: S2SMeta = serde_json::from_str(&fs::read_to_string(meta_path(path))?)?;
        let params = Self::from_bytes(&fs::read(path)?, &meta.config)?;
        Ok((params, meta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S2SMeta {
    pub config: S2SConfig,
    pub vocab_path: Option<String>,
    pub prsalm_sha256: Option<String>,
}

pub fn s2s_forward(params: &S2SParams, ids: &[u32], pos: &[PosTag]) -> Result<Vec<f64>> {
    Ok(params.forward(ids, pos)?.0)
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    Ok(mse_loss_grad(pred, target)?.0)
}

/// Mean squared error over the `n` tokens of one sample, and its gradient
/// `2 (pred - target) / n`.
pub fn mse_loss_grad(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::shape(format!(
            "{} predictions but {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::validation("mse over zero tokens"));
    }
    let n = pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}

/// Model inputs of one PrSalM record.
#[derive(Debug, Clone, PartialEq)]
pub struct S2SExample {
    pub ids: Vec<u32>,
    pub pos: Vec<PosTag>,
    pub target: Vec<f64>,
}

pub fn encode_records(records: &[PrSalMRecord], vocab: &Vocab) -> Vec<S2SExample> {
    records
        .iter()
        .map(|r| S2SExample {
            ids: r.tokens.iter().map(|t| vocab.id_or_unk(t)).collect(),
            pos: r.pos.clone(),
            target: r.saliency_norm.clone(),
        })
        .collect()
}

/// Analyzable piece ids and POS tags of a tokenized sample.
pub fn s2s_inputs(sample: &TokenizedSample, lexicon: &Lexicon) -> Result<(Vec<u32>, Vec<PosTag>)> {
    let (_, pos, _, _) = annotate(sample, lexicon, &FrequencyTable::default())?;
    let ids = sample.analyzable_indices().into_iter().map(|i| sample.ids[i]).collect();
    Ok((ids, pos))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossLog {
    /// Sum of per-sample losses over each run of 200 training samples, in
    /// training order across epochs; a trailing partial run is dropped.
    pub train_chunks: Vec<f64>,
    /// Summed validation loss; entry 0 is before any update.
    pub val_epochs: Vec<f64>,
}

impl LossLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("chunk_index,split,loss_sum\n");
        for (i, v) in self.train_chunks.iter().enumerate() {
            writeln!(s, "{i},train,{v}").unwrap();
        }
        for (i, v) in self.val_epochs.iter().enumerate() {
            writeln!(s, "{i},val,{v}").unwrap();
        }
        s
    }
}

fn summed_loss(params: &S2SParams, data: &[S2SExample]) -> Result<f64> {
    let losses: Vec<f64> = data
        .par_iter()
        .map(|e| mse_loss(&s2s_forward(params, &e.ids, &e.pos)?, &e.target))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum())
}

/// Trains on the split's train records (val records feed the validation
/// log). Each minibatch minimizes the sum of per-sample losses with Adam.
pub fn train_s2s(split: &PrSalMSplit, vocab: &Vocab, config: &S2SConfig) -> Result<(S2SParams, LossLog)> {
    if split.train.is_empty() {
        return Err(Error::validation("PrSalM split has no training records"));
    }
    let train = encode_records(&split.train, vocab);
    let val = encode_records(&split.val, vocab);
    let mut params = S2SParams::init(config, vocab.len())?;
    let mut state = AdamState::new(&params);
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut log = LossLog::default();
    if !val.is_empty() {
        log.val_epochs.push(summed_loss(&params, &val)?);
    }
    let diverged = |log: &LossLog, what: String| {
        Error::Training(format!(
            "{what}; last finite train chunk {:?}, last val {:?}",
            log.train_chunks.last(),
            log.val_epochs.last()
        ))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5152_5354);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let (mut chunk_sum, mut chunk_n) = (0.0, 0);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let results: Vec<(f64, S2SParams)> = batch
                .par_iter()
                .map(|&i| params.loss_and_grad(&train[i].ids, &train[i].pos, &train[i].target))
                .collect::<Result<_>>()?;
            let mut grad = params.zeros_like();
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(diverged(&log, format!("non-finite loss in epoch {epoch}")));
                }
                grad.accumulate(g);
                chunk_sum += loss;
                chunk_n += 1;
                if chunk_n == LOSS_CHUNK {
                    log.train_chunks.push(chunk_sum);
                    chunk_sum = 0.0;
                    chunk_n = 0;
                }
            }
            if adam_step(&mut params, &grad, &mut state, &adam).is_err() {
                return Err(diverged(&log, format!("non-finite parameters in epoch {epoch}")));
            }
        }
        if !val.is_empty() {
            let v = summed_loss(&params, &val)
                .map_err(|_| diverged(&log, format!("validation failed after epoch {epoch}")))?;
            log::info!("s2s epoch {}: val loss sum {v:.5}", epoch + 1);
            log.val_epochs.push(v);
        }
    }
    Ok((params, log))
}

/// Saliency from the trained regressor alone: predictions clamped to
/// `[0, 1]`, then min-max scaled.
pub fn s2s_predict(
    params: &S2SParams,
    ids: &[u32],
    pos: &[PosTag],
    sample_id: &str,
    target_class: usize,
) -> Result<SaliencyVector> {
    let raw = s2s_forward(params, ids, pos)?
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    SaliencyVector::new(sample_id, SaliencyMethod::Seq2saliency, target_class, raw, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::gradient_check;

    fn tiny() -> S2SParams {
        let cfg = S2SConfig {
            token_emb_dim: 8,
            pos_emb_dim: 4,
            model_dim: 8,
            heads: 1,
            ffn_dim: 16,
            max_len: 16,
            seed: 3,
            ..S2SConfig::default()
        };
        S2SParams::init(&cfg, 12).unwrap()
    }

    const POS6: [PosTag; 6] = [
        PosTag::Noun,
        PosTag::Verb,
        PosTag::Det,
        PosTag::Noun,
        PosTag::Adj,
        PosTag::Punct,
    ];

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[0.5, 0.5], &[0.0, 1.0]).unwrap(), 0.25);
        assert_eq!(mse_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(mse_loss(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn mse_gradient_matches_differences() {
        let pred = [0.2, -0.4, 0.9];
        let target = [0.0, 0.5, 1.0];
        let (_, g) = mse_loss_grad(&pred, &target).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut up = pred;
            let mut down = pred;
            up[i] += h;
            down[i] -= h;
            let num = (mse_loss(&up, &target).unwrap() - mse_loss(&down, &target).unwrap()) / (2.0 * h);
            assert!((num - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn output_length_follows_input() {
        let p = S2SParams::init(&S2SConfig::default(), 30).unwrap();
        for n in [1usize, 5, 40] {
            let ids: Vec<u32> = (0..n as u32).map(|i| 5 + i % 25).collect();
            let pos = vec![PosTag::Noun; n];
            assert_eq!(s2s_forward(&p, &ids, &pos).unwrap().len(), n);
        }
    }

    #[test]
    fn zero_head_predicts_zero() {
        let mut p = tiny();
        p.head.w.fill(0.0);
        p.head.b.as_mut().unwrap().fill(0.0);
        let out = s2s_forward(&p, &[5, 6, 7, 8, 9, 10], &POS6).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = tiny();
        assert!(s2s_forward(&p, &[5; 17], &[PosTag::Noun; 17]).is_err());
        assert!(s2s_forward(&p, &[5, 6], &[PosTag::Noun]).is_err());
        assert!(s2s_forward(&p, &[], &[]).is_err());
    }

    #[test]
    fn tiny_gradients_match_finite_differences() {
        let p = tiny();
        let ids = [5, 6, 7, 8, 9, 10];
        let target = [0.0, 0.2, 1.0, 0.4, 0.1, 0.7];
        let report = gradient_check(&p, 1e-5, |q| q.loss_and_grad(&ids, &POS6, &target)).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn predict_clamps() {
        let mut p = tiny();
        p.head.b.as_mut().unwrap().fill(5.0);
        let v = s2s_predict(&p, &[5, 6, 7], &POS6[..3], "s", 0).unwrap();
        assert!(v.raw.iter().all(|x| (0.0..=1.0).contains(x)));
        assert_eq!(v.method, SaliencyMethod::Seq2saliency);
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = tiny();
        let back = S2SParams::from_bytes(&p.to_bytes(), &p.config).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn csv_layout() {
        let log = LossLog {
            train_chunks: vec![3.0, 1.5],
            val_epochs: vec![2.0],
        };
        assert_eq!(
            log.to_csv(),
            "chunk_index,split,loss_sum\n0,train,3\n1,train,1.5\n0,val,2\n"
        );
    }
}
