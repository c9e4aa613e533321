//! Generate a planted two-class corpus, train the transformer classifier on
//! it, and save a checkpoint.
//!
//! ```text
//! cargo run --example train_classifier
//! ```

use salientseq::classifier::{meta_path, train_classifier, BlackBox, ClassifierConfig, ClassifierMeta};
use salientseq::corpus::{generate_planted_corpus, PlantedConfig};
use salientseq::tokenize::{train_vocab, Method};

fn main() -> salientseq::Result<()> {
    let corpus = generate_planted_corpus(&PlantedConfig::two_class(400, 100, 100, 1))?;
    println!(
        "corpus: {} train / {} val / {} test",
        corpus.train.len(),
        corpus.val.len(),
        corpus.test.len()
    );
    println!("sample: {:?} (label {})", corpus.train[0].text, corpus.train[0].label);

    let texts: Vec<&str> = corpus.train.iter().map(|s| s.text.as_str()).collect();
    let vocab = train_vocab(&texts, 200, Method::WordPiece)?;

    let config = ClassifierConfig::default();
    let (model, report) = train_classifier(&corpus, &vocab, &config, 7)?;
    let epochs: Vec<String> = report.epoch_train_loss.iter().map(|l| format!("{l:.4}")).collect();
    println!("train loss {:.4} -> [{}]", report.initial_train_loss, epochs.join(", "));
    println!(
        "accuracy: train {:.3}, val {:.3}",
        report.train_accuracy, report.val_accuracy
    );

    for s in corpus.test.iter().take(3) {
        let p = model.predict(&s.tokenize(&vocab).ids)?;
        println!("  {:<45} label {} p = [{:.3}, {:.3}]", s.text, s.label, p[0], p[1]);
    }

    let dir = tempfile::tempdir()?;
    let ckpt = dir.path().join("classifier.bin");
    let meta = ClassifierMeta {
        vocab_path: None,
        classes: config.classes,
        config,
        seed: 7,
    };
    model.save(&ckpt, &meta)?;
    println!("saved {} and {}", ckpt.display(), meta_path(&ckpt).display());
    Ok(())
}
