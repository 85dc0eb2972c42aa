//! Text normalization shared by every stage: HTML stripping, tokenization,
//! stopword flags, Porter stemming, content/function classification and
//! corpus term statistics.

mod html;
pub mod porter;
mod stats;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use html::strip_html;
pub use stats::{IdfVariant, TermStats, TextError};

/// Longer tokens are truncated to this many characters.
pub const MAX_TOKEN_CHARS: usize = 64;

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords.txt");
const DEFAULT_FUNCTION_WORDS: &str = include_str!("../../data/function_words.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordClass {
    Content,
    Function,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub stem: String,
    /// Byte offset of the token in the input text.
    pub char_offset: usize,
    pub is_stopword: bool,
    pub word_class: WordClass,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    pub tokens: Vec<Token>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Stems of the non-stopword tokens, in order.
    pub fn content_stems(&self) -> impl Iterator<Item = &str> {
        self.tokens
            .iter()
            .filter(|t| !t.is_stopword)
            .map(|t| t.stem.as_str())
    }

    /// Surfaces joined by single spaces.
    pub fn surface_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            if !s.is_empty() {
                s.push(' ');
            }
            s.push_str(&t.surface);
        }
        s
    }
}

/// A one-word-per-line list. Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, Default)]
pub struct WordList {
    words: HashSet<String>,
}

impl WordList {
    pub fn parse(text: &str) -> Self {
        let mut words = HashSet::new();
        for line in text.lines() {
            let w = line.trim();
            if w.is_empty() || w.starts_with('#') {
                continue;
            }
            let w = w.to_lowercase();
            // Contractions ("don't") are split by the tokenizer, so their
            // fragments are listed too.
            for frag in w.split(|c: char| !c.is_alphanumeric()).filter(|f| !f.is_empty()) {
                words.insert(frag.to_string());
            }
            words.insert(w);
        }
        WordList { words }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Tokenizer configuration: stopword list and function-word lexicon.
#[derive(Debug, Clone)]
pub struct Analyzer {
    stopwords: WordList,
    function_words: WordList,
}

impl Default for Analyzer {
    fn default() -> Self {
        Analyzer {
            stopwords: WordList::parse(DEFAULT_STOPWORDS),
            function_words: WordList::parse(DEFAULT_FUNCTION_WORDS),
        }
    }
}

impl Analyzer {
    pub fn new(stopwords: WordList, function_words: WordList) -> Self {
        Analyzer {
            stopwords,
            function_words,
        }
    }

    pub fn is_stopword(&self, surface: &str) -> bool {
        self.stopwords.contains(surface)
    }

    pub fn word_class(&self, surface: &str) -> WordClass {
        if self.function_words.contains(surface) {
            WordClass::Function
        } else {
            WordClass::Content
        }
    }

    /// Split on non-alphanumeric characters, lowercase, stem.
    pub fn tokenize(&self, text: &str) -> TokenizedText {
        let mut tokens = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            if c.is_alphanumeric() {
                if start.is_none() {
                    start = Some(i);
                }
            } else if let Some(s) = start.take() {
                self.push_token(&mut tokens, &text[s..i], s);
            }
        }
        if let Some(s) = start {
            self.push_token(&mut tokens, &text[s..], s);
        }
        TokenizedText { tokens }
    }

    /// Strip HTML first, then tokenize.
    pub fn tokenize_html(&self, html: &str) -> TokenizedText {
        self.tokenize(&strip_html(html))
    }

    fn push_token(&self, out: &mut Vec<Token>, raw: &str, offset: usize) {
        let mut surface: String = raw
            .chars()
            .flat_map(char::to_lowercase)
            .filter(|c| c.is_alphanumeric())
            .collect();
        if let Some((cut, _)) = surface.char_indices().nth(MAX_TOKEN_CHARS) {
            surface.truncate(cut);
        }
        let stem = porter::stem(&surface);
        out.push(Token {
            is_stopword: self.is_stopword(&surface),
            word_class: self.word_class(&surface),
            stem,
            char_offset: offset,
            surface,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_examples() {
        let a = Analyzer::default();
        let t = a.tokenize("Running servers");
        let stems: Vec<_> = t.tokens.iter().map(|t| t.stem.as_str()).collect();
        assert_eq!(stems, ["run", "server"]);

        let the = &a.tokenize("the").tokens[0];
        assert!(the.is_stopword);
        assert_eq!(the.word_class, WordClass::Function);

        assert!(a.tokenize("").is_empty());
    }

    #[test]
    fn punctuation_and_offsets() {
        let a = Analyzer::default();
        let t = a.tokenize("Hi, there! don't-stop ... x");
        let surf: Vec<_> = t.tokens.iter().map(|t| t.surface.as_str()).collect();
        assert_eq!(surf, ["hi", "there", "don", "t", "stop", "x"]);
        assert!(t.tokens.iter().all(|t| t.stem == t.stem.to_lowercase()));
        assert!(t.tokens[2].is_stopword && t.tokens[3].is_stopword);
        assert_eq!(t.tokens[1].char_offset, 4);
    }

    #[test]
    fn unicode_and_cap() {
        let a = Analyzer::default();
        let t = a.tokenize("Ça marche — Straße");
        let surf: Vec<_> = t.tokens.iter().map(|t| t.surface.as_str()).collect();
        assert_eq!(surf, ["ça", "marche", "straße"]);
        let long = "x".repeat(100);
        assert_eq!(a.tokenize(&long).tokens[0].surface.len(), MAX_TOKEN_CHARS);
    }

    #[test]
    fn lexicons_loaded() {
        let a = Analyzer::default();
        assert!(a.is_stopword("the") && a.is_stopword("aren't") && a.is_stopword("aren"));
        assert!(!a.is_stopword("server"));
        assert_eq!(a.word_class("between"), WordClass::Function);
        assert_eq!(a.word_class("server"), WordClass::Content);
        assert!(a.function_words.len() > 250);
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(s in "\\PC{0,80}") {
            let a = Analyzer::default();
            let once = a.tokenize(&s);
            let twice = a.tokenize(&once.surface_text());
            let s1: Vec<_> = once.tokens.iter().map(|t| (&t.surface, &t.stem)).collect();
            let s2: Vec<_> = twice.tokens.iter().map(|t| (&t.surface, &t.stem)).collect();
            prop_assert_eq!(s1, s2);
        }

        #[test]
        fn offsets_strictly_increase(s in "[a-z ,.!]{0,60}") {
            let t = Analyzer::default().tokenize(&s);
            for w in t.tokens.windows(2) {
                prop_assert!(w[0].char_offset < w[1].char_offset);
            }
        }
    }
}
