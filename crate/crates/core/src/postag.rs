//! Coarse part-of-speech tagging from a closed-class lexicon plus suffix rules.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Noun,
    Verb,
    Adj,
    Adv,
    Pron,
    Det,
    Adp,
    Num,
    Conj,
    Prt,
    Punct,
    X,
}

impl PosTag {
    pub const ALL: [PosTag; 12] = [
        PosTag::Noun,
        PosTag::Verb,
        PosTag::Adj,
        PosTag::Adv,
        PosTag::Pron,
        PosTag::Det,
        PosTag::Adp,
        PosTag::Num,
        PosTag::Conj,
        PosTag::Prt,
        PosTag::Punct,
        PosTag::X,
    ];

    /// Dense index in `0..12`, used as the POS embedding row.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Noun => "NOUN",
            PosTag::Verb => "VERB",
            PosTag::Adj => "ADJ",
            PosTag::Adv => "ADV",
            PosTag::Pron => "PRON",
            PosTag::Det => "DET",
            PosTag::Adp => "ADP",
            PosTag::Num => "NUM",
            PosTag::Conj => "CONJ",
            PosTag::Prt => "PRT",
            PosTag::Punct => "PUNCT",
            PosTag::X => "X",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PosTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PosTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown POS tag `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    words: HashMap<String, PosTag>,
    /// Sorted longest suffix first.
    suffixes: Vec<(String, PosTag)>,
    default: PosTag,
}

const BUNDLED: &str = include_str!("../data/lexicon.tsv");
const SUFFIX_SENTINEL: &str = "#suffix";

impl Default for Lexicon {
    fn default() -> Self {
        Self::parse(BUNDLED).expect("bundled lexicon is well formed")
    }
}

impl Lexicon {
    pub fn new(words: HashMap<String, PosTag>, mut suffixes: Vec<(String, PosTag)>) -> Self {
        // stable sort keeps file order among equal-length suffixes
        suffixes.sort_by(|a, b| b.0.chars().count().cmp(&a.0.chars().count()));
        Self {
            words,
            suffixes,
            default: PosTag::Noun,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// `word<TAB>TAG` lines, then `suffix<TAB>TAG` lines after `#suffix`.
    /// Other lines starting with `#` are comments.
    pub fn parse(content: &str) -> Result<Self> {
        let mut words = HashMap::new();
        let mut suffixes = Vec::new();
        let mut in_suffix = false;
        for (idx, line) in content.lines().enumerate() {
            if line == SUFFIX_SENTINEL {
                in_suffix = true;
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let (key, tag) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: idx + 1,
                msg: format!("expected `word<TAB>TAG`, found `{line}`"),
            })?;
            let tag: PosTag = tag.trim().parse().map_err(|e: Error| Error::Parse {
                line: idx + 1,
                msg: e.to_string(),
            })?;
            if in_suffix {
                suffixes.push((key.to_string(), tag));
            } else {
                words.insert(key.to_string(), tag);
            }
        }
        Ok(Self::new(words, suffixes))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn tag_word(&self, word: &str) -> PosTag {
        if let Some(tag) = self.words.get(word) {
            return *tag;
        }
        if is_numeric_literal(word) {
            return PosTag::Num;
        }
        if !word.is_empty() && word.chars().all(|c| !c.is_alphanumeric()) {
            return PosTag::Punct;
        }
        self.suffixes
            .iter()
            // a suffix must leave at least a two-letter stem behind
            .find(|(suffix, _)| word.len() >= suffix.len() + 2 && word.ends_with(suffix.as_str()))
            .map(|(_, tag)| *tag)
            .unwrap_or(self.default)
    }
}

fn is_numeric_literal(word: &str) -> bool {
    let mut digits = 0;
    for c in word.chars() {
        match c {
            '0'..='9' => digits += 1,
            '.' | ',' | '-' | '%' => {}
            _ => return false,
        }
    }
    digits > 0
}

/// Tags each (lowercased) word.
pub fn tag_words<S: AsRef<str>>(words: &[S], lexicon: &Lexicon) -> Vec<PosTag> {
    words.iter().map(|w| lexicon.tag_word(w.as_ref())).collect()
}

/// Copies each word's tag onto its pieces; special pieces get `X`.
pub fn propagate_tags(word_tags: &[PosTag], word_of: &[Option<usize>]) -> Result<Vec<PosTag>> {
    word_of
        .iter()
        .map(|w| match w {
            None => Ok(PosTag::X),
            Some(i) => word_tags.get(*i).copied().ok_or_else(|| {
                Error::validation(format!(
                    "piece aligned to word {i} but only {} word tags were given",
                    word_tags.len()
                ))
            }),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_lookup() {
        let lex = Lexicon::default();
        assert_eq!(lex.tag_word("the"), PosTag::Det);
        assert!(lex.len() >= 300);
    }

    #[test]
    fn numbers_and_punctuation() {
        let lex = Lexicon::default();
        assert_eq!(lex.tag_word("42"), PosTag::Num);
        assert_eq!(lex.tag_word("3.5"), PosTag::Num);
        assert_eq!(lex.tag_word("!"), PosTag::Punct);
    }

    #[test]
    fn suffix_rule_trace() {
        // "quickly": not in the lexicon, not numeric; suffixes tried longest
        // first: no 4/3-letter rule matches ("ckly", "kly"), then "ly" -> ADV
        let lex = Lexicon::default();
        assert!(!lex.words.contains_key("quickly"));
        assert_eq!(lex.tag_word("quickly"), PosTag::Adv);
        let longer: Vec<_> = lex
            .suffixes
            .iter()
            .filter(|(s, _)| s.len() > 2 && "quickly".ends_with(s.as_str()))
            .collect();
        assert!(longer.is_empty());
    }

    #[test]
    fn longest_suffix_wins() {
        let lex = Lexicon::parse("#suffix\ns\tNOUN\nness\tNOUN\nss\tVERB\n").unwrap();
        assert_eq!(lex.tag_word("kindness"), PosTag::Noun);
        assert_eq!(lex.tag_word("boss"), PosTag::Verb);
    }

    #[test]
    fn default_is_noun() {
        assert_eq!(Lexicon::default().tag_word("zark"), PosTag::Noun);
    }

    #[test]
    fn tagging_is_total() {
        let words = ["the", "", "42", "running", "?!"];
        assert_eq!(tag_words(&words, &Lexicon::default()).len(), words.len());
    }

    #[test]
    fn propagation_copies_parent_tag() {
        let tags = propagate_tags(&[PosTag::Noun, PosTag::Verb], &[Some(0), Some(0), Some(1)]).unwrap();
        assert_eq!(tags, vec![PosTag::Noun, PosTag::Noun, PosTag::Verb]);
    }

    #[test]
    fn propagation_specials_and_empty() {
        assert_eq!(
            propagate_tags(&[PosTag::Noun], &[None, Some(0)]).unwrap(),
            vec![PosTag::X, PosTag::Noun]
        );
        assert!(propagate_tags(&[], &[]).unwrap().is_empty());
    }

    #[test]
    fn propagation_out_of_range() {
        assert!(matches!(
            propagate_tags(&[PosTag::Noun], &[Some(3)]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn lexicon_file_round_trip_parse() {
        let lex = Lexicon::parse("dog\tNOUN\n#suffix\nly\tADV\n").unwrap();
        assert_eq!(lex.tag_word("dog"), PosTag::Noun);
        assert_eq!(lex.tag_word("slowly"), PosTag::Adv);
        assert!(Lexicon::parse("dog NOUN\n").is_err());
        assert!(Lexicon::parse("dog\tFOO\n").is_err());
    }
}
