//! Tag words with the bundled lexicon and copy each word's tag onto its
//! subword pieces.
//!
//! ```text
//! cargo run --example pos_tagging
//! ```

use salientseq::postag::{propagate_tags, tag_words, Lexicon};
use salientseq::tokenize::{tokenize, train_vocab, Method};

fn main() -> salientseq::Result<()> {
    let lexicon = Lexicon::default();
    println!("lexicon: {} entries", lexicon.len());

    let text = "The director quickly rewrote the painfully boring ending";
    let vocab = train_vocab(
        &[text, "the ending was boring", "a director rewrote it"],
        60,
        Method::WordPiece,
    )?;
    let tok = tokenize(text, &vocab);

    let word_tags = tag_words(&tok.words, &lexicon);
    for (w, t) in tok.words.iter().zip(&word_tags) {
        println!("  {w:<10} {}", t.as_str());
    }

    // special tokens get no tag, so propagate over analyzable pieces only
    let analyzable: Vec<Option<usize>> = tok.word_of.iter().filter(|w| w.is_some()).copied().collect();
    let piece_tags = propagate_tags(&word_tags, &analyzable)?;
    let pieces: Vec<&str> = tok.analyzable_pieces().collect();
    println!();
    for (p, t) in pieces.iter().zip(&piece_tags) {
        println!("  {p:<10} {}", t.as_str());
    }
    Ok(())
}
