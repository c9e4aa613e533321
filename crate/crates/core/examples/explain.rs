//! Explain one prediction of a trained classifier three ways: exact
//! Shapley values, sampled Kernel SHAP, and occlusion masking.
//!
//! ```text
//! cargo run --example explain
//! ```

use salientseq::classifier::{train_classifier, BlackBox, ClassifierConfig, CountingBlackBox};
use salientseq::corpus::{generate_planted_corpus, PlantedConfig};
use salientseq::saliency::{explain, ExplainConfig, SaliencyMethod};
use salientseq::tokenize::{train_vocab, Method};

fn main() -> salientseq::Result<()> {
    let corpus = generate_planted_corpus(&PlantedConfig::two_class(300, 50, 20, 3))?;
    let texts: Vec<&str> = corpus.train.iter().map(|s| s.text.as_str()).collect();
    let vocab = train_vocab(&texts, 200, Method::WordPiece)?;
    let (model, _) = train_classifier(&corpus, &vocab, &ClassifierConfig::default(), 5)?;

    // the longest test sample, so a 40-coalition budget has to sample
    let sample = corpus.test.iter().max_by_key(|s| s.text.split(' ').count()).unwrap();
    let tok = sample.tokenize(&vocab);
    let full = model.predict(&tok.ids)?[sample.label];
    println!("{:?}  label {}  p(label) = {full:.4}\n", sample.text, sample.label);

    let methods = [
        ExplainConfig {
            method: SaliencyMethod::ShapExact,
            ..Default::default()
        },
        ExplainConfig {
            method: SaliencyMethod::ShapSampled,
            budget: Some(40),
            seed: 9,
        },
        ExplainConfig {
            method: SaliencyMethod::Masking,
            ..Default::default()
        },
    ];
    let pieces: Vec<&str> = tok.analyzable_pieces().collect();
    for cfg in &methods {
        let counter = CountingBlackBox::new(&model);
        let v = explain(&counter, &tok, &sample.id, sample.label, cfg)?;
        println!("{:?} ({} model calls)", cfg.method, counter.calls());
        for (p, (r, n)) in pieces.iter().zip(v.raw.iter().zip(&v.norm)) {
            println!("  {p:<8} {r:>+9.4}  {n:.3}");
        }
        if let Some(base) = v.base_value {
            // SHAP attributions add up to the gap between the masked and full prediction
            let sum: f64 = v.raw.iter().sum();
            println!("  base {base:.4} + sum {sum:.4} = {:.4}", base + sum);
        }
        println!();
    }
    Ok(())
}
