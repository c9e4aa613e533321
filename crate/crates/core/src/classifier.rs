//! The model under explanation: a one-layer transformer text classifier that
//! is exposed to the saliency methods only through [`BlackBox`].

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, LabeledText};
use crate::error::{Error, Result};
use crate::nnkit::checkpoint::{decode_checkpoint, encode_checkpoint, restore};
use crate::nnkit::layers::{embed, embed_backward, sinusoidal_positions, Encoder, EncoderLayerCache, Linear};
use crate::nnkit::tensor::{softmax_in_place, Tensor};
use crate::nnkit::{adam_step, AdamConfig, AdamState, Params};
use crate::tokenize::Vocab;

/// Anything that maps token ids to a probability vector over classes.
///
/// Implementations must be pure and safe to call from many threads.
pub trait BlackBox: Sync {
    fn num_classes(&self) -> usize;
    fn predict(&self, ids: &[u32]) -> Result<Vec<f64>>;

    fn predict_batch(&self, batch: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
        batch.par_iter().map(|ids| self.predict(ids)).collect()
    }
}

/// Wraps a black box and counts how often it is queried.
pub struct CountingBlackBox<'a, B: BlackBox + ?Sized> {
    inner: &'a B,
    calls: AtomicUsize,
}

impl<'a, B: BlackBox + ?Sized> CountingBlackBox<'a, B> {
    pub fn new(inner: &'a B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: BlackBox + ?Sized> BlackBox for CountingBlackBox<'_, B> {
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn predict(&self, ids: &[u32]) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.predict(ids)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            ffn_dim: 128,
            classes: 2,
            epochs: 4,
            batch_size: 16,
            lr: 2e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub config: ClassifierConfig,
    pub token_emb: Tensor,
    pub encoder: Encoder,
    pub head: Linear,
}

impl Params for ClassifierParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.token_emb"), &self.token_emb));
        self.encoder.collect(&format!("{prefix}.encoder"), out);
        self.head.collect(&format!("{prefix}.head"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.token_emb"), &mut self.token_emb));
        self.encoder.collect_mut(&format!("{prefix}.encoder"), out);
        self.head.collect_mut(&format!("{prefix}.head"), out);
    }
}

pub struct ForwardCache {
    ids: Vec<usize>,
    encoder: Vec<EncoderLayerCache>,
    pooled: Tensor,
}

impl ClassifierParams {
    pub fn init(config: &ClassifierConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        if config.classes < 2 {
            return Err(Error::validation("a classifier needs at least 2 classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            config: config.clone(),
            // unit-scale embeddings so token identity is not drowned by the
            // positional coding at initialization
            token_emb: Tensor::uniform(&[vocab_size, config.d_model], 1.0, &mut rng),
            encoder: Encoder::new(1, config.d_model, config.heads, config.ffn_dim, &mut rng)?,
            head: Linear::new(config.d_model, config.classes, true, &mut rng),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.token_emb.rows()
    }

    fn check_ids(&self, ids: &[u32]) -> Result<Vec<usize>> {
        if ids.is_empty() {
            return Err(Error::validation("cannot classify an empty sequence"));
        }
        ids.iter()
            .map(|&id| {
                let id = id as usize;
                if id < self.vocab_size() {
                    Ok(id)
                } else {
                    Err(Error::validation(format!(
                        "token id {id} outside vocabulary of size {}",
                        self.vocab_size()
                    )))
                }
            })
            .collect()
    }

    pub fn forward(&self, ids: &[u32]) -> Result<(Vec<f64>, ForwardCache)> {
        let ids = self.check_ids(ids)?;
        let n = ids.len();
        let mut x = embed(&self.token_emb, &ids)?;
        x.add_assign(&sinusoidal_positions(n, self.config.d_model)?);
        let (h, encoder) = self.encoder.forward(&x)?;
        let mut pooled = Tensor::zeros(&[1, self.config.d_model]);
        for i in 0..n {
            for (p, v) in pooled.data_mut().iter_mut().zip(h.row(i)) {
                *p += v / n as f64;
            }
        }
        let mut probs = self.head.forward(&pooled)?.into_data();
        softmax_in_place(&mut probs);
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("classifier output".into()));
        }
        Ok((probs, ForwardCache { ids, encoder, pooled }))
    }

    /// Cross-entropy loss of one sample and its gradient.
    pub fn loss_and_grad(&self, ids: &[u32], label: usize) -> Result<(f64, ClassifierParams)> {
        let (probs, cache) = self.forward(ids)?;
        let label_p = *probs
            .get(label)
            .ok_or_else(|| Error::validation(format!("label {label} outside {} classes", probs.len())))?;
        let loss = -label_p.max(1e-300).ln();
        let mut grad = self.zeros_like();
        let mut dlogits = probs;
        dlogits[label] -= 1.0;
        let dlogits = Tensor::from_vec(&[1, self.config.classes], dlogits)?;
        let dpooled = self.head.backward(&cache.pooled, &dlogits, &mut grad.head);
        let n = cache.ids.len();
        let mut dh = Tensor::zeros(&[n, self.config.d_model]);
        for i in 0..n {
            for (d, p) in dh.row_mut(i).iter_mut().zip(dpooled.data()) {
                *d = p / n as f64;
            }
        }
        let dx = self.encoder.backward(&cache.encoder, &dh, &mut grad.encoder)?;
        embed_backward(&mut grad.token_emb, &cache.ids, &dx);
        Ok((loss, grad))
    }

    pub fn predict_probs(&self, ids: &[u32]) -> Result<Vec<f64>> {
        Ok(self.forward(ids)?.0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_checkpoint(self)
    }

    pub fn from_bytes(bytes: &[u8], config: &ClassifierConfig) -> Result<Self> {
        let entries = decode_checkpoint(bytes)?;
        let vocab_size = entries
            .iter()
            .find(|(n, _)| n == "token_emb")
            .map(|(_, t)| t.rows())
            .ok_or_else(|| Error::validation("checkpoint has no token_emb tensor"))?;
        let mut params = Self::init(config, vocab_size, 0)?;
        restore(&mut params, &entries)?;
        Ok(params)
    }

    /// Writes the checkpoint to `path` and the metadata sidecar next to it.
    pub fn save(&self, path: &Path, meta: &ClassifierMeta) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        fs::write(meta_path(path), serde_json::to_string_pretty(meta)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, ClassifierMeta)> {
        let meta: ClassifierMeta = serde_json::from_str(&fs::read_to_string(meta_path(path))?)?;
        let params = Self::from_bytes(&fs::read(path)?, &meta.config)?;
        Ok((params, meta))
    }
}

pub fn meta_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMeta {
    pub vocab_path: Option<String>,
    pub classes: usize,
    pub config: ClassifierConfig,
    pub seed: u64,
}

impl BlackBox for ClassifierParams {
    fn num_classes(&self) -> usize {
        self.config.classes
    }

    fn predict(&self, ids: &[u32]) -> Result<Vec<f64>> {
        self.predict_probs(ids)
    }
}

/// Token ids plus label, ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub ids: Vec<u32>,
    pub label: usize,
}

pub fn encode_all(samples: &[LabeledText], vocab: &Vocab) -> Vec<Encoded> {
    samples
        .iter()
        .map(|s| Encoded {
            ids: s.tokenize(vocab).ids,
            label: s.label,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_train_loss: f64,
    /// Mean training loss over the whole train split after each epoch.
    pub epoch_train_loss: Vec<f64>,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

pub fn mean_loss(params: &ClassifierParams, samples: &[Encoded]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::validation("cannot compute a loss over zero samples"));
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let p = params.predict_probs(&s.ids)?;
            Ok(-p[s.label].max(1e-300).ln())
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn evaluate_accuracy<B: BlackBox + ?Sized>(model: &B, samples: &[Encoded]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::validation("cannot compute accuracy over zero samples"));
    }
    let hits: Vec<bool> = samples
        .par_iter()
        .map(|s| Ok(argmax(&model.predict(&s.ids)?) == s.label))
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / samples.len() as f64)
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Minimizes cross-entropy with Adam over shuffled minibatches. Per-sample
/// gradients may be computed in parallel; they are always summed in sample
/// order, so the result does not depend on the thread count.
pub fn train_classifier(
    split: &CorpusSplit,
    vocab: &Vocab,
    config: &ClassifierConfig,
    seed: u64,
) -> Result<(ClassifierParams, TrainReport)> {
    if split.classes != config.classes {
        return Err(Error::validation(format!(
            "corpus has {} classes but the classifier is configured for {}",
            split.classes, config.classes
        )));
    }
    if let Some(bad) = split.iter_all().find(|(_, s)| s.label >= config.classes) {
        return Err(Error::validation(format!(
            "sample {} has label {} out of range",
            bad.1.id, bad.1.label
        )));
    }
    let train = encode_all(&split.train, vocab);
    let val = encode_all(&split.val, vocab);
    let mut params = ClassifierParams::init(config, vocab.len(), seed)?;
    let initial_train_loss = mean_loss(&params, &train)?;
    let mut state = AdamState::new(&params);
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_train_loss = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size.max(1)) {
            let results: Vec<(f64, ClassifierParams)> = batch
                .par_iter()
                .map(|&i| params.loss_and_grad(&train[i].ids, train[i].label))
                .collect::<Result<_>>()?;
            let mut grad = params.zeros_like();
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(Error::Training(format!("non-finite loss in epoch {epoch}")));
                }
                grad.accumulate(g);
            }
            for (_, t) in grad.named_mut() {
                t.scale(1.0 / batch.len() as f64);
            }
            adam_step(&mut params, &grad, &mut state, &adam)?;
        }
        let loss = mean_loss(&params, &train)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("training loss diverged after epoch {epoch}")));
        }
        log::info!("classifier epoch {epoch}: train loss {loss:.5}");
        epoch_train_loss.push(loss);
    }
    let train_accuracy = evaluate_accuracy(&params, &train)?;
    let val_accuracy = if val.is_empty() {
        f64::NAN
    } else {
        evaluate_accuracy(&params, &val)?
    };
    log::info!("classifier accuracy: train {train_accuracy:.4}, val {val_accuracy:.4}");
    Ok((
        params,
        TrainReport {
            initial_train_loss,
            epoch_train_loss,
            train_accuracy,
            val_accuracy,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::gradient_check;
    use crate::tokenize::MASK_ID;

    fn tiny() -> ClassifierParams {
        let config = ClassifierConfig {
            d_model: 8,
            heads: 2,
            ffn_dim: 16,
            classes: 3,
            ..ClassifierConfig::default()
        };
        ClassifierParams::init(&config, 10, 7).unwrap()
    }

    #[test]
    fn tiny_gradients_match_finite_differences() {
        let params = tiny();
        let ids = [5, 6, 7, 8, 9];
        let report = gradient_check(&params, 1e-5, |p| p.loss_and_grad(&ids, 1)).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn probabilities_form_a_distribution() {
        let p = tiny();
        for ids in [vec![5], vec![5, 6, 7], vec![MASK_ID; 4]] {
            let probs = p.predict(&ids).unwrap();
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(probs.iter().all(|v| *v >= 0.0));
        }
        assert_eq!(p.predict(&[MASK_ID; 4]).unwrap(), p.predict(&[MASK_ID; 4]).unwrap());
    }

    #[test]
    fn out_of_vocab_id_is_rejected() {
        assert!(matches!(tiny().predict(&[3, 99]), Err(Error::Validation(_))));
        assert!(tiny().predict(&[]).is_err());
    }

    #[test]
    fn batch_equals_single() {
        let p = tiny();
        let batch = vec![vec![5, 6], vec![7, 8, 9, 5], vec![6]];
        let out = p.predict_batch(&batch).unwrap();
        for (ids, probs) in batch.iter().zip(&out) {
            let single = p.predict(ids).unwrap();
            for (a, b) in single.iter().zip(probs) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn accuracy_hand_count() {
        struct Fixed;
        impl BlackBox for Fixed {
            fn num_classes(&self) -> usize {
                2
            }
            fn predict(&self, ids: &[u32]) -> Result<Vec<f64>> {
                // class 1 iff the first id is odd
                Ok(if ids[0] % 2 == 1 {
                    vec![0.2, 0.8]
                } else {
                    vec![0.7, 0.3]
                })
            }
        }
        // 10 samples: ids 0..10, labels chosen so that exactly 7 match
        let labels = [0, 1, 0, 1, 1, 0, 0, 1, 0, 0];
        let samples: Vec<Encoded> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Encoded {
                ids: vec![i as u32],
                label: l,
            })
            .collect();
        // predictions 0,1,0,1,0,1,0,1,0,1 -> matches at 0,1,2,3,6,7,8 = 7
        assert!((evaluate_accuracy(&Fixed, &samples).unwrap() - 0.7).abs() < 1e-15);
        let flipped: Vec<Encoded> = samples
            .iter()
            .map(|s| Encoded {
                ids: s.ids.clone(),
                label: 1 - s.label,
            })
            .collect();
        assert!((evaluate_accuracy(&Fixed, &flipped).unwrap() - 0.3).abs() < 1e-15);
        assert!(evaluate_accuracy(&Fixed, &[]).is_err());
    }

    #[test]
    fn counting_wrapper_counts() {
        let p = tiny();
        let c = CountingBlackBox::new(&p);
        c.predict(&[5]).unwrap();
        c.predict_batch(&[vec![5], vec![6]]).unwrap();
        assert_eq!(c.calls(), 3);
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = tiny();
        let back = ClassifierParams::from_bytes(&p.to_bytes(), &p.config).unwrap();
        assert_eq!(back, p);
    }
}
