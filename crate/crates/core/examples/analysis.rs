//! Linguistic statistics over a PrSalM dataset: which parts of speech land
//! in the top-θ tokens, where in the sentence they sit, and how frequent
//! they are.
//!
//! ```text
//! cargo run --example analysis
//! ```

use salientseq::analysis::{analyze, write_csvs, AnalysisConfig, Summary};
use salientseq::classifier::{train_classifier, ClassifierConfig};
use salientseq::corpus::{generate_planted_corpus, PlantedConfig};
use salientseq::postag::Lexicon;
use salientseq::prsalm::{build_prsalm, PrSalMSource};
use salientseq::saliency::{ExplainConfig, SaliencyMethod};
use salientseq::tokenize::{train_vocab, Method};

fn main() -> salientseq::Result<()> {
    let corpus = generate_planted_corpus(&PlantedConfig::two_class(200, 40, 40, 4))?;
    let texts: Vec<&str> = corpus.train.iter().map(|s| s.text.as_str()).collect();
    let vocab = train_vocab(&texts, 200, Method::WordPiece)?;
    let (model, _) = train_classifier(&corpus, &vocab, &ClassifierConfig::default(), 3)?;
    // masking is the cheapest explainer, good enough for a demo
    let source = PrSalMSource {
        source_corpus: "planted".into(),
        checkpoint_sha256: String::new(),
        saliency: ExplainConfig {
            method: SaliencyMethod::Masking,
            ..Default::default()
        },
    };
    let prsalm = build_prsalm(&corpus, &vocab, &Lexicon::default(), &model, &source, 0)?;
    let records: Vec<_> = prsalm.iter_all().cloned().collect();

    let report = analyze(&records, &AnalysisConfig::default())?;
    println!("{} records, theta {}", report.n_records, report.theta);
    println!("mean top-theta tokens per record, by POS:");
    for (tag, share) in &report.pos_histogram {
        println!("  {tag:<6} {share:.3}");
    }
    println!("mean position ratio of top tokens: {:?}", report.position_means);
    println!("per-POS mean position ratio:");
    for (key, v) in report.per_pos_position.iter().filter_map(|(k, v)| v.map(|v| (k, v))) {
        println!("  {key:<9} {v:.3}");
    }
    let show = |s: &Option<Summary>| s.map_or("-".to_string(), |s| format!("{:.1}/{}", s.mean, s.median));
    println!("training frequency (mean/median), top tokens vs all tokens:");
    for (tag, fs) in &report.frequency_stats {
        println!("  {tag:<6} {:>10}  {:>10}", show(&fs.top), show(&fs.all));
    }

    let dir = tempfile::tempdir()?;
    write_csvs(&report, dir.path())?;
    for entry in std::fs::read_dir(dir.path())? {
        println!("wrote {}", entry?.file_name().to_string_lossy());
    }
    Ok(())
}
