//! Subword tokenizers: merge-trained BPE and greedy longest-match WordPiece.
//!
//! Both methods share one merge trainer. For WordPiece, non-initial
//! characters of a word start life as `##`-prefixed continuation symbols, so
//! the learned vocabulary contains both word-initial pieces and continuation
//! fragments; segmentation then runs greedy longest-match-first over it. BPE
//! segmentation replays the learned merges in rank order.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const MASK_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const CLS_ID: u32 = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[MASK]", "[SEP]", "[CLS]"];

pub const CONTINUATION_MARKER: &str = "##";

const VOCAB_MAGIC: &str = "salientseq-vocab";
const VOCAB_VERSION: &str = "v1";
const VOCAB_HEADER: &str = "salientseq-vocab v1";
const MERGES_SENTINEL: &str = "#merges";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    WordPiece,
    Bpe,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::WordPiece => "wordpiece",
            Method::Bpe => "bpe",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wordpiece" => Ok(Method::WordPiece),
            "bpe" => Ok(Method::Bpe),
            other => Err(Error::validation(format!("unknown tokenizer method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    method: Method,
    tokens: Vec<String>,
    id_of: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    merge_rank: HashMap<(String, String), usize>,
}

impl Vocab {
    fn from_parts(method: Method, tokens: Vec<String>, merges: Vec<(String, String)>) -> Result<Self> {
        for (id, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(id).map(String::as_str) != Some(*special) {
                return Err(Error::validation(format!("special token {special} missing at id {id}")));
            }
        }
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if id_of.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::validation(format!("token `{tok}` appears twice")));
            }
        }
        let mut merge_rank = HashMap::with_capacity(merges.len());
        for (rank, (a, b)) in merges.iter().enumerate() {
            let out = merge_output(method, a, b);
            if !id_of.contains_key(&out) {
                return Err(Error::validation(format!(
                    "merge output `{out}` is not in the vocabulary"
                )));
            }
            merge_rank.entry((a.clone(), b.clone())).or_insert(rank);
        }
        Ok(Self {
            method,
            tokens,
            id_of,
            merges,
            merge_rank,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.id_of.get(token).copied()
    }

    /// Id of `token`, falling back to UNK.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn to_file_string(&self) -> String {
        let mut out = format!("{VOCAB_HEADER} {}\n", self.method);
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        if self.method == Method::Bpe {
            out.push_str(MERGES_SENTINEL);
            out.push('\n');
            for (a, b) in &self.merges {
                out.push_str(a);
                out.push(' ');
                out.push_str(b);
                out.push('\n');
            }
        }
        out
    }

    /// Loads a vocabulary file. When `expected` is given, a file trained with
    /// another method is rejected.
    pub fn load(path: &Path, expected: Option<Method>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, expected)
    }

    pub fn parse(content: &str, expected: Option<Method>) -> Result<Self> {
        let mut lines = content.lines();
        let header = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty vocab file".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [magic, version, method_str] = fields[..] else {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header `{VOCAB_HEADER} <method>`, found `{header}`"),
            });
        };
        if magic != VOCAB_MAGIC {
            return Err(Error::Parse {
                line: 1,
                msg: format!("not a vocab file: header `{header}`"),
            });
        }
        if version != VOCAB_VERSION {
            return Err(Error::validation(format!(
                "unsupported vocab version {version}, expected {VOCAB_VERSION}"
            )));
        }
        let method: Method = method_str.parse()?;
        if let Some(want) = expected {
            if want != method {
                return Err(Error::validation(format!(
                    "vocab was trained as {method} but {want} was requested"
                )));
            }
        }
        let mut tokens = Vec::new();
        let mut merges = Vec::new();
        let mut in_merges = false;
        for (idx, line) in lines.enumerate() {
            if line == MERGES_SENTINEL {
                in_merges = true;
                continue;
            }
            if in_merges {
                let (a, b) = line.split_once(' ').ok_or_else(|| Error::Parse {
                    line: idx + 2,
                    msg: format!("malformed merge `{line}`"),
                })?;
                merges.push((a.to_string(), b.to_string()));
            } else {
                tokens.push(line.to_string());
            }
        }
        Self::from_parts(method, tokens, merges)
    }
}

fn merge_output(method: Method, a: &str, b: &str) -> String {
    match method {
        Method::Bpe => format!("{a}{b}"),
        Method::WordPiece => format!("{a}{}", b.strip_prefix(CONTINUATION_MARKER).unwrap_or(b)),
    }
}

/// Lowercases and splits into words on whitespace; every punctuation
/// character becomes a word of its own.
pub fn pre_split(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut current = String::new();
        for c in chunk.chars().flat_map(char::to_lowercase) {
            if c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace()) {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

fn initial_symbols(method: Method, word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| match (method, i) {
            (Method::WordPiece, i) if i > 0 => format!("{CONTINUATION_MARKER}{c}"),
            _ => c.to_string(),
        })
        .collect()
}

pub fn train_bpe(texts: &[&str], vocab_size: usize) -> Result<Vocab> {
    train_vocab(texts, vocab_size, Method::Bpe)
}

pub fn train_wordpiece(texts: &[&str], vocab_size: usize) -> Result<Vocab> {
    train_vocab(texts, vocab_size, Method::WordPiece)
}

/// Merge training: repeatedly merges the most frequent adjacent symbol pair
/// (ties broken by the lexicographically smallest pair) until the vocabulary
/// reaches `vocab_size` or no pair occurs at least twice.
///
/// Pair counts are global over the word-frequency table, so the result does
/// not depend on the order of `texts`.
pub fn train_vocab(texts: &[&str], vocab_size: usize, method: Method) -> Result<Vocab> {
    let mut word_counts: HashMap<String, u64> = HashMap::new();
    for text in texts {
        for word in pre_split(text) {
            *word_counts.entry(word).or_insert(0) += 1;
        }
    }
    let mut sorted_words: Vec<(String, u64)> = word_counts.into_iter().collect();
    sorted_words.sort();

    let mut symbols: Vec<String> = Vec::new();
    let mut sym_id: HashMap<String, u32> = HashMap::new();
    let mut intern = |s: String, symbols: &mut Vec<String>| -> u32 {
        *sym_id.entry(s.clone()).or_insert_with(|| {
            symbols.push(s);
            (symbols.len() - 1) as u32
        })
    };

    let mut words: Vec<(Vec<u32>, u64)> = Vec::with_capacity(sorted_words.len());
    for (word, count) in &sorted_words {
        let syms = initial_symbols(method, word)
            .into_iter()
            .map(|s| intern(s, &mut symbols))
            .collect();
        words.push((syms, *count));
    }

    let alphabet: BTreeSet<String> = symbols.iter().cloned().collect();
    if vocab_size <= alphabet.len() + SPECIAL_TOKENS.len() {
        return Err(Error::validation(format!(
            "vocab size {vocab_size} leaves no room for merges: alphabet has {} symbols plus {} specials",
            alphabet.len(),
            SPECIAL_TOKENS.len()
        )));
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet.iter().cloned());
    let mut in_vocab: std::collections::HashSet<String> = tokens.iter().cloned().collect();
    let mut merges = Vec::new();

    let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut pair_words: HashMap<(u32, u32), BTreeSet<usize>> = HashMap::new();
    for (wi, (syms, count)) in words.iter().enumerate() {
        for w in syms.windows(2) {
            *pair_counts.entry((w[0], w[1])).or_insert(0) += count;
            pair_words.entry((w[0], w[1])).or_default().insert(wi);
        }
    }

    while tokens.len() < vocab_size {
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c >= 2)
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    // smaller pair wins ties, so reverse the lexicographic order
                    let ka = (&symbols[pa.0 as usize], &symbols[pa.1 as usize]);
                    let kb = (&symbols[pb.0 as usize], &symbols[pb.1 as usize]);
                    kb.cmp(&ka)
                })
            })
            .map(|(p, _)| *p);
        let Some((a, b)) = best else { break };

        let merged = merge_output(method, &symbols[a as usize], &symbols[b as usize]);
        merges.push((symbols[a as usize].clone(), symbols[b as usize].clone()));
        if in_vocab.insert(merged.clone()) {
            tokens.push(merged.clone());
        }
        let m = intern(merged, &mut symbols);

        let affected: Vec<usize> = pair_words
            .get(&(a, b))
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        for wi in affected {
            let (syms, count) = &words[wi];
            let count = *count;
            for w in syms.windows(2) {
                let key = (w[0], w[1]);
                if let Some(c) = pair_counts.get_mut(&key) {
                    *c -= count;
                    if *c == 0 {
                        pair_counts.remove(&key);
                    }
                }
                if let Some(set) = pair_words.get_mut(&key) {
                    set.remove(&wi);
                }
            }
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                    next.push(m);
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            for w in next.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_insert(0) += count;
                pair_words.entry((w[0], w[1])).or_default().insert(wi);
            }
            words[wi].0 = next;
        }
    }

    if method == Method::WordPiece {
        // segmentation is greedy longest-match; the merge history is not kept
        merges.clear();
    }
    Vocab::from_parts(method, tokens, merges)
}

/// One tokenized text: piece ids and strings plus the index of the
/// whitespace word each piece came from (`None` for special tokens).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSample {
    pub ids: Vec<u32>,
    pub pieces: Vec<String>,
    pub word_of: Vec<Option<usize>>,
    /// The lowercased pre-split words the pieces were cut from.
    pub words: Vec<String>,
}

impl TokenizedSample {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions of non-special pieces, in order.
    pub fn analyzable_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.word_of[i].is_some()).collect()
    }

    pub fn analyzable_pieces(&self) -> impl Iterator<Item = &str> {
        self.pieces
            .iter()
            .zip(&self.word_of)
            .filter(|(_, w)| w.is_some())
            .map(|(p, _)| p.as_str())
    }

    pub fn num_analyzable(&self) -> usize {
        self.word_of.iter().filter(|w| w.is_some()).count()
    }

    fn push(&mut self, id: u32, piece: String, word: Option<usize>) {
        self.ids.push(id);
        self.pieces.push(piece);
        self.word_of.push(word);
    }
}

pub fn tokenize(text: &str, vocab: &Vocab) -> TokenizedSample {
    let mut out = TokenizedSample {
        ids: Vec::new(),
        pieces: Vec::new(),
        word_of: Vec::new(),
        words: Vec::new(),
    };
    append_words(&mut out, text, vocab);
    out
}

fn append_words(out: &mut TokenizedSample, text: &str, vocab: &Vocab) {
    for word in pre_split(text) {
        let wi = out.words.len();
        let pieces = match vocab.method {
            Method::WordPiece => segment_wordpiece(&word, vocab),
            Method::Bpe => segment_bpe(&word, vocab),
        };
        for piece in pieces {
            match piece {
                Some(p) => out.push(vocab.id_or_unk(&p), p, Some(wi)),
                None => out.push(UNK_ID, SPECIAL_TOKENS[UNK_ID as usize].to_string(), Some(wi)),
            }
        }
        out.words.push(word);
    }
}

/// `[CLS] premise [SEP] hypothesis [SEP]`; hypothesis word indices continue
/// after the premise's.
pub fn tokenize_pair(premise: &str, hypothesis: &str, vocab: &Vocab) -> TokenizedSample {
    let mut out = TokenizedSample {
        ids: Vec::new(),
        pieces: Vec::new(),
        word_of: Vec::new(),
        words: Vec::new(),
    };
    let special = |id: u32| SPECIAL_TOKENS[id as usize].to_string();
    out.push(CLS_ID, special(CLS_ID), None);
    append_words(&mut out, premise, vocab);
    out.push(SEP_ID, special(SEP_ID), None);
    append_words(&mut out, hypothesis, vocab);
    out.push(SEP_ID, special(SEP_ID), None);
    out
}

/// Greedy longest-match-first. A word with no complete segmentation becomes
/// a single UNK (`None`).
fn segment_wordpiece(word: &str, vocab: &Vocab) -> Vec<Option<String>> {
    let chars: Vec<char> = word.chars().collect();
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while end > start {
            let body: String = chars[start..end].iter().collect();
            let candidate = if start > 0 {
                format!("{CONTINUATION_MARKER}{body}")
            } else {
                body
            };
            if vocab.id_of.contains_key(&candidate) {
                found = Some(candidate);
                break;
            }
            end -= 1;
        }
        match found {
            Some(p) => {
                pieces.push(Some(p));
                start = end;
            }
            None => return vec![None],
        }
    }
    pieces
}

/// Replays merges lowest rank first; leftover symbols missing from the
/// vocabulary become UNK (`None`).
fn segment_bpe(word: &str, vocab: &Vocab) -> Vec<Option<String>> {
    let mut syms: Vec<String> = word.chars().map(|c| c.to_string()).collect();
    loop {
        let best = syms
            .windows(2)
            .enumerate()
            .filter_map(|(i, w)| vocab.merge_rank.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
            .min();
        let Some((rank, _)) = best else { break };
        let (a, b) = &vocab.merges[rank];
        let mut next = Vec::with_capacity(syms.len());
        let mut i = 0;
        while i < syms.len() {
            if i + 1 < syms.len() && &syms[i] == a && &syms[i + 1] == b {
                next.push(format!("{a}{b}"));
                i += 2;
            } else {
                next.push(std::mem::take(&mut syms[i]));
                i += 1;
            }
        }
        syms = next;
    }
    syms.into_iter()
        .map(|s| vocab.id_of.contains_key(&s).then_some(s))
        .collect()
}

/// Rebuilds the pre-split word list from pieces; `None` if any UNK was emitted.
pub fn detokenize_words(sample: &TokenizedSample, method: Method) -> Option<Vec<String>> {
    let mut words: Vec<String> = Vec::new();
    for (piece, word) in sample.pieces.iter().zip(&sample.word_of) {
        let Some(w) = word else { continue };
        if piece == SPECIAL_TOKENS[UNK_ID as usize] {
            return None;
        }
        let body = match method {
            Method::WordPiece => piece.strip_prefix(CONTINUATION_MARKER).unwrap_or(piece),
            Method::Bpe => piece.as_str(),
        };
        if words.len() == *w {
            words.push(String::new());
        }
        words.last_mut()?.push_str(body);
    }
    Some(words)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_merge_is_most_frequent_pair() {
        // "ab" occurs 3 times (twice in "abab", once in "ab"), "ba" once
        let vocab = train_bpe(&["abab", "ab"], 5 + 2 + 1).unwrap();
        assert_eq!(vocab.merges()[0], ("a".to_string(), "b".to_string()));
        assert!(vocab.id("ab").is_some());
    }

    #[test]
    fn training_is_deterministic_and_order_free() {
        let texts = ["the cat sat", "on the mat", "that cat is fat", "the hat"];
        let a = train_bpe(&texts, 40).unwrap();
        let b = train_bpe(&texts, 40).unwrap();
        assert_eq!(a.merges(), b.merges());
        let mut rev = texts;
        rev.reverse();
        let c = train_bpe(&rev, 40).unwrap();
        assert_eq!(a.merges(), c.merges());
        assert_eq!(a.tokens(), c.tokens());
    }

    #[test]
    fn unique_characters_give_no_merges() {
        let vocab = train_bpe(&["a b c d"], 20).unwrap();
        assert!(vocab.merges().is_empty());
        assert_eq!(vocab.len(), 4 + 5);
    }

    #[test]
    fn vocab_too_small_is_rejected() {
        assert!(matches!(train_bpe(&["abc"], 8), Err(Error::Validation(_))));
    }

    #[test]
    fn whole_word_in_vocab_is_one_piece() {
        let vocab = train_wordpiece(&["hello hello hello"], 100).unwrap();
        let t = tokenize("Hello", &vocab);
        assert_eq!(t.pieces, vec!["hello"]);
        assert_eq!(t.word_of, vec![Some(0)]);
    }

    fn manual_vocab(method: Method, extra: &[&str]) -> Vocab {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(extra.iter().map(|s| s.to_string()));
        Vocab::from_parts(method, tokens, Vec::new()).unwrap()
    }

    #[test]
    fn longest_match_trace() {
        // "zark" beats "z"/"za"/"zar"; the rest "ness" is matched as "##ness"
        // before "##n" could be tried.
        let vocab = manual_vocab(
            Method::WordPiece,
            &["z", "za", "zar", "zark", "##n", "##ness", "##e", "##s"],
        );
        let t = tokenize("zarkness", &vocab);
        assert_eq!(t.pieces, vec!["zark", "##ness"]);
        assert_eq!(t.word_of, vec![Some(0), Some(0)]);
    }

    #[test]
    fn unsegmentable_word_becomes_unk() {
        let vocab = manual_vocab(Method::WordPiece, &["ok"]);
        let t = tokenize("ok qq", &vocab);
        assert_eq!(t.pieces, vec!["ok", "[UNK]"]);
        assert_eq!(t.ids[1], UNK_ID);
        assert_eq!(t.word_of, vec![Some(0), Some(1)]);
    }

    #[test]
    fn pair_layout() {
        let vocab = manual_vocab(Method::WordPiece, &["a", "b"]);
        let t = tokenize_pair("a", "b", &vocab);
        assert_eq!(t.pieces, vec!["[CLS]", "a", "[SEP]", "b", "[SEP]"]);
        assert_eq!(t.word_of, vec![None, Some(0), None, Some(1), None]);
        assert_eq!(t.len(), 1 + 1 + 3);
    }

    #[test]
    fn punctuation_splits_off() {
        assert_eq!(pre_split("Great, fun!"), vec!["great", ",", "fun", "!"]);
    }

    #[test]
    fn save_load_round_trip() {
        let vocab = train_bpe(&["lower lowest newer newest wider"], 40).unwrap();
        let back = Vocab::parse(&vocab.to_file_string(), Some(Method::Bpe)).unwrap();
        assert_eq!(back, vocab);
        let wp = train_wordpiece(&["lower lowest newer newest wider"], 40).unwrap();
        assert_eq!(Vocab::parse(&wp.to_file_string(), None).unwrap(), wp);
    }

    #[test]
    fn load_rejects_missing_special() {
        let text = "salientseq-vocab v1 wordpiece\n[PAD]\n[UNK]\n[SEP]\n[CLS]\nx\n";
        assert!(matches!(Vocab::parse(text, None), Err(Error::Validation(_))));
    }

    #[test]
    fn load_rejects_method_mismatch() {
        let vocab = train_bpe(&["abab ab"], 10).unwrap();
        let err = Vocab::parse(&vocab.to_file_string(), Some(Method::WordPiece)).unwrap_err();
        assert!(err.to_string().contains("bpe"), "{err}");
    }

    #[test]
    fn load_rejects_wrong_version() {
        let text = "salientseq-vocab v2 bpe\n[PAD]\n";
        assert!(matches!(Vocab::parse(text, None), Err(Error::Validation(_))));
    }

    fn word_strategy() -> impl Strategy<Value = String> {
        "[a-f]{1,7}"
    }

    proptest! {
        #[test]
        fn pieces_rebuild_input(
            corpus in proptest::collection::vec(word_strategy(), 1..30),
            probe in proptest::collection::vec(word_strategy(), 1..6),
            size in 12usize..60,
            wordpiece in any::<bool>(),
        ) {
            let method = if wordpiece { Method::WordPiece } else { Method::Bpe };
            let joined = corpus.join(" ");
            // full alphabet so nothing is out of vocabulary
            let texts = [joined.as_str(), "a b c d e f", "xa xb xc xd xe xf"];
            let Ok(vocab) = train_vocab(&texts, size.max(30), method) else { return Ok(()); };
            let text = probe.join(" ");
            let t = tokenize(&text, &vocab);
            prop_assert_eq!(t.ids.len(), t.pieces.len());
            prop_assert_eq!(t.ids.len(), t.word_of.len());
            prop_assert!(t.word_of.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(!t.ids.contains(&PAD_ID));
            let rebuilt = detokenize_words(&t, method).expect("no UNK expected");
            prop_assert_eq!(rebuilt, pre_split(&text));
            for (wi, word) in pre_split(&text).iter().enumerate() {
                let n = t.word_of.iter().filter(|w| **w == Some(wi)).count();
                prop_assert!(n <= word.chars().count());
            }
        }
    }
}
