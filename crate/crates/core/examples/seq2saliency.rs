//! Train the Seq2Saliency regressor on a PrSalM dataset and predict
//! saliency for new text without querying the classifier.
//!
//! ```text
//! cargo run --example seq2saliency
//! ```

use salientseq::classifier::{train_classifier, ClassifierConfig};
use salientseq::corpus::{generate_planted_corpus, PlantedConfig};
use salientseq::postag::Lexicon;
use salientseq::prsalm::{build_prsalm, PrSalMSource};
use salientseq::saliency::{ExplainConfig, SaliencyMethod};
use salientseq::seq2saliency::{s2s_inputs, s2s_predict, train_s2s, S2SConfig};
use salientseq::tokenize::{tokenize, train_vocab, Method};

fn main() -> salientseq::Result<()> {
    let corpus = generate_planted_corpus(&PlantedConfig::two_class(300, 60, 20, 8))?;
    let texts: Vec<&str> = corpus.train.iter().map(|s| s.text.as_str()).collect();
    let vocab = train_vocab(&texts, 200, Method::WordPiece)?;
    let (model, _) = train_classifier(&corpus, &vocab, &ClassifierConfig::default(), 3)?;
    let source = PrSalMSource {
        source_corpus: "planted".into(),
        checkpoint_sha256: String::new(),
        saliency: ExplainConfig {
            method: SaliencyMethod::Masking,
            ..Default::default()
        },
    };
    let lexicon = Lexicon::default();
    let prsalm = build_prsalm(&corpus, &vocab, &lexicon, &model, &source, 0)?;

    // a smaller network than the default keeps this quick
    let config = S2SConfig {
        token_emb_dim: 32,
        model_dim: 32,
        layers: 2,
        ffn_dim: 64,
        epochs: 4,
        lr: 3e-3,
        ..S2SConfig::default()
    };
    let (params, log) = train_s2s(&prsalm, &vocab, &config)?;
    let first = log.train_chunks.first().copied().unwrap_or(f64::NAN);
    let last = log.train_chunks.last().copied().unwrap_or(f64::NAN);
    let val: Vec<String> = log.val_epochs.iter().map(|l| format!("{l:.3}")).collect();
    println!(
        "train chunk loss {first:.3} -> {last:.3}; val per epoch [{}]",
        val.join(", ")
    );

    for text in ["the film was quov and quite slow", "some people just dax every scene"] {
        let tok = tokenize(text, &vocab);
        let (ids, pos) = s2s_inputs(&tok, &lexicon)?;
        let v = s2s_predict(&params, &ids, &pos, "new", 0)?;
        let line: Vec<String> = tok
            .analyzable_pieces()
            .zip(&v.norm)
            .map(|(p, s)| format!("{p}:{s:.2}"))
            .collect();
        println!("{}", line.join(" "));
    }
    Ok(())
}
