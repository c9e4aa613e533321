//! The whole pipeline on a planted corpus, in memory: classifier, SHAP
//! labels, PrSalM, analysis, Seq2Saliency, and the overlap comparison
//! against masking. Every class-c sample carries one trigger word from a
//! class-specific list, so a good explainer should put the trigger on top.
//!
//! ```text
//! cargo run --release --example planted_pipeline
//! ```

use salientseq::analysis::{analyze, AnalysisConfig};
use salientseq::classifier::{train_classifier, ClassifierConfig};
use salientseq::corpus::{generate_planted_corpus, PlantedConfig};
use salientseq::digest::sha256_hex;
use salientseq::evaluate::{overlap_eval, render_heatmap, HeatMap, MethodSaliencies, RenderFormat};
use salientseq::postag::Lexicon;
use salientseq::prsalm::{build_prsalm, PrSalMSource};
use salientseq::saliency::{masking_saliency, top_k, ExplainConfig};
use salientseq::seq2saliency::{s2s_inputs, s2s_predict, train_s2s, S2SConfig};
use salientseq::tokenize::{train_vocab, Method};

fn main() -> salientseq::Result<()> {
    let planted = PlantedConfig::two_class(700, 200, 200, 202);
    let triggers: Vec<&String> = planted.trigger_tokens.iter().flatten().collect();
    let corpus = generate_planted_corpus(&planted)?;
    let texts: Vec<&str> = corpus.train.iter().map(|s| s.text.as_str()).collect();
    let vocab = train_vocab(&texts, 200, Method::WordPiece)?;
    let lexicon = Lexicon::default();

    let (model, report) = train_classifier(&corpus, &vocab, &ClassifierConfig::default(), 8)?;
    println!("[1] classifier: val accuracy {:.3}", report.val_accuracy);

    let source = PrSalMSource {
        source_corpus: planted.name.clone(),
        checkpoint_sha256: sha256_hex(&model.to_bytes()),
        saliency: ExplainConfig::default(),
    };
    let prsalm = build_prsalm(&corpus, &vocab, &lexicon, &model, &source, 31)?;
    let hits = prsalm
        .test
        .iter()
        .filter(|r| triggers.contains(&&r.tokens[top_k(&r.saliency_raw, 1)[0]]))
        .count();
    println!(
        "[2] PrSalM: {:?}; SHAP ranks the trigger first in {hits}/{} test records",
        prsalm.manifest.counts,
        prsalm.test.len()
    );

    let train_records: Vec<_> = prsalm.train.clone();
    let analysis = analyze(&train_records, &AnalysisConfig::default())?;
    println!(
        "[3] analysis: mean top-0.3 tokens per record by POS {:?}",
        analysis.pos_histogram
    );

    let (s2s, log) = train_s2s(
        &prsalm,
        &vocab,
        &S2SConfig {
            seed: 41,
            epochs: 6,
            ..S2SConfig::default()
        },
    )?;
    println!(
        "[4] seq2saliency: val loss {:.2} -> {:.2}",
        log.val_epochs.first().unwrap_or(&f64::NAN),
        log.val_epochs.last().unwrap_or(&f64::NAN)
    );

    let mut samples = Vec::new();
    for (s, r) in corpus.test.iter().zip(&prsalm.test) {
        let tok = s.tokenize(&vocab);
        let (ids, pos) = s2s_inputs(&tok, &lexicon)?;
        samples.push(MethodSaliencies {
            id: s.id.clone(),
            shap: r.saliency_raw.clone(),
            masking: masking_saliency(&model, &tok, &s.id, s.label)?.raw,
            s2s: s2s_predict(&s2s, &ids, &pos, &s.id, s.label)?.raw,
        });
    }
    let overlap = overlap_eval(&samples, 4, 50, 0.3, None)?;
    println!("[5] overlap with SHAP at theta 0.3:");
    print!("{}", overlap.to_table());

    let first = &prsalm.test[0];
    let map = HeatMap::new(
        first.tokens.clone(),
        first.saliency_norm.clone(),
        Some(format!("label {}", first.label)),
    )?;
    print!("[6] {}", render_heatmap(&map, RenderFormat::Ansi));
    Ok(())
}
