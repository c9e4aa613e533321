//! Build a small PrSalM dataset from a trained classifier, write it as
//! JSONL, and load it back with checksum verification.
//!
//! ```text
//! cargo run --example build_prsalm
//! ```

use salientseq::classifier::{train_classifier, ClassifierConfig};
use salientseq::corpus::{generate_planted_corpus, PlantedConfig};
use salientseq::digest::sha256_hex;
use salientseq::postag::Lexicon;
use salientseq::prsalm::{build_prsalm, load_prsalm, save_prsalm, PrSalMSource};
use salientseq::saliency::ExplainConfig;
use salientseq::tokenize::{train_vocab, Method};

fn main() -> salientseq::Result<()> {
    let corpus = generate_planted_corpus(&PlantedConfig::two_class(150, 40, 40, 11))?;
    let texts: Vec<&str> = corpus.train.iter().map(|s| s.text.as_str()).collect();
    let vocab = train_vocab(&texts, 200, Method::WordPiece)?;
    let (model, _) = train_classifier(&corpus, &vocab, &ClassifierConfig::default(), 3)?;

    let source = PrSalMSource {
        source_corpus: "planted".into(),
        checkpoint_sha256: sha256_hex(&model.to_bytes()),
        saliency: ExplainConfig::default(),
    };
    let prsalm = build_prsalm(&corpus, &vocab, &Lexicon::default(), &model, &source, 5)?;
    println!(
        "counts {:?}, skipped {}",
        prsalm.manifest.counts,
        prsalm.manifest.skipped.len()
    );

    let r = &prsalm.train[0];
    println!("record {} (label {}, predicted {})", r.id, r.label, r.predicted);
    println!("  token     pos    ratio  freq  saliency");
    for i in 0..r.len() {
        println!(
            "  {:<9} {:<6} {:.3}  {:>4}  {:.3}",
            r.tokens[i],
            r.pos[i].as_str(),
            r.position_ratio[i],
            r.frequency[i],
            r.saliency_norm[i]
        );
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("prsalm.jsonl");
    save_prsalm(&prsalm, &path)?;
    let loaded = load_prsalm(&path, Some(&source.checkpoint_sha256))?;
    assert_eq!(loaded.split, prsalm);
    println!(
        "round trip through {} ok, {} warnings",
        path.display(),
        loaded.warnings.len()
    );
    Ok(())
}
