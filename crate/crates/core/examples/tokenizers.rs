//! Train a BPE and a WordPiece vocabulary on the same handful of sentences
//! and compare how each segments an unseen phrase.
//!
//! ```text
//! cargo run --example tokenizers
//! ```

use salientseq::tokenize::{detokenize_words, tokenize, train_vocab, Method};

const TEXTS: &[&str] = &[
    "the actors were unbelievable and the story was unforgettable",
    "an unremarkable plot with remarkable acting",
    "the acting was believable but the plot was forgettable",
    "remarkably, the story never drags",
    "acting, plotting and storytelling all work",
];

fn main() -> salientseq::Result<()> {
    let probe = "unbelievably remarkable storytelling";
    for method in [Method::Bpe, Method::WordPiece] {
        let vocab = train_vocab(TEXTS, 80, method)?;
        let tok = tokenize(probe, &vocab);
        println!("{method:?}: {} entries, {} merges", vocab.len(), vocab.merges().len());
        for ((piece, id), word) in tok.pieces.iter().zip(&tok.ids).zip(&tok.word_of) {
            let word = word.map_or("-".to_string(), |w| tok.words[w].clone());
            println!("  {piece:<12} id {id:<4} word {word}");
        }
        // pieces regroup into the original words
        println!("  words back: {:?}\n", detokenize_words(&tok, method));
    }
    Ok(())
}
