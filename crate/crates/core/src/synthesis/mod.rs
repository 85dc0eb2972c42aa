//! Question to query conversion: duplicate injection, TF·IDF query
//! extraction, user retention and graded relevance judgments.

mod io;
mod length;
mod log;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AccountId, Corpus, PostKey};
use crate::ranker::RankModel;
use crate::text::{Analyzer, IdfVariant, TermStats, TextError, TokenizedText, WordClass};

pub use io::{read_log, read_qrels, write_log, write_qrels};
pub use length::LengthDistribution;
pub use log::{
    corpus_term_stats, derive_log, derive_qrels, inject_duplicates, retain_users, DeriveConfig,
    DeriveReport, Holder, LengthSampling, NegativeSampling,
};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("question has no candidate terms")]
    EmptyQuestion,
    #[error("question {0} has no accepted answer")]
    MissingAcceptedAnswer(PostKey),
    #[error("question {0} is not in the corpus")]
    UnknownQuestion(PostKey),
    #[error("invalid length distribution: {0}")]
    InvalidLengthDistribution(String),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A query derived from a question held by a user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticQuery {
    pub query_id: u64,
    pub account_id: AccountId,
    pub forum_id: String,
    pub source_question_id: u64,
    pub terms: Vec<String>,
    pub is_duplicate: bool,
    /// Position in the user's history, from 0.
    pub timestamp_ord: u64,
}

impl SyntheticQuery {
    pub fn source(&self) -> PostKey {
        PostKey::new(self.forum_id.clone(), self.source_question_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QrelEntry {
    pub query_id: u64,
    pub doc_id: PostKey,
    pub grade: u8,
}

/// A tokenized question: title tokens followed by body tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QuestionDoc {
    pub tokens: TokenizedText,
    /// The first `title_len` tokens come from the title.
    pub title_len: usize,
}

impl QuestionDoc {
    /// `title` and `body` are plain text.
    pub fn new(analyzer: &Analyzer, title: &str, body: &str) -> Self {
        let tokens = analyzer.tokenize(&format!("{title} {body}"));
        let title_len = tokens
            .tokens
            .iter()
            .take_while(|t| t.char_offset < title.len())
            .count();
        QuestionDoc { tokens, title_len }
    }

    pub fn from_corpus(corpus: &Corpus, analyzer: &Analyzer, key: &PostKey) -> Option<Self> {
        let (title, body) = corpus.question_text(key)?;
        Some(Self::new(analyzer, &title, &body))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A distinct non-stopword stem of a question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub stem: String,
    pub tf: usize,
    /// Token index of the first occurrence.
    pub first_pos: usize,
    pub in_title: bool,
    pub is_content: bool,
}

/// Candidate stems in first-occurrence order. TF counts every surface form
/// mapping to the stem.
pub fn candidates(doc: &QuestionDoc) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, t) in doc.tokens.tokens.iter().enumerate() {
        if t.is_stopword {
            continue;
        }
        let in_title = i < doc.title_len;
        match index.get(t.stem.as_str()) {
            Some(&j) => {
                out[j].tf += 1;
                out[j].in_title |= in_title;
            }
            None => {
                index.insert(&t.stem, out.len());
                out.push(Candidate {
                    stem: t.stem.clone(),
                    tf: 1,
                    first_pos: i,
                    in_title,
                    is_content: t.word_class == WordClass::Content,
                });
            }
        }
    }
    out
}

/// How candidate stems are scored.
#[derive(Debug, Clone, Copy)]
pub enum Strategy<'a> {
    TfidfTop,
    Ranker(&'a RankModel),
}

/// Score every candidate under `strategy`, aligned with `candidates(doc)`.
pub fn score_candidates(
    doc: &QuestionDoc,
    cands: &[Candidate],
    stats: &TermStats,
    idf: IdfVariant,
    strategy: Strategy<'_>,
) -> Result<Vec<f64>, SynthesisError> {
    match strategy {
        Strategy::TfidfTop => cands
            .iter()
            .map(|c| Ok(c.tf as f64 * stats.idf_with(&c.stem, idf)?))
            .collect(),
        Strategy::Ranker(model) => Ok(model.score_candidates(doc, cands, stats)?),
    }
}

/// Indices of the `l` best candidates, ranked by higher score, then earlier
/// first occurrence, then stem; returned in first-occurrence order.
pub fn select_top(cands: &[Candidate], scores: &[f64], l: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(cands[a].first_pos.cmp(&cands[b].first_pos))
            .then(cands[a].stem.cmp(&cands[b].stem))
    });
    order.truncate(l);
    order.sort_by_key(|&i| cands[i].first_pos);
    order
}

/// The top `l` stems of `doc`, clamped to the number of candidates.
pub fn top_terms(
    doc: &QuestionDoc,
    stats: &TermStats,
    idf: IdfVariant,
    strategy: Strategy<'_>,
    l: usize,
) -> Result<Vec<String>, SynthesisError> {
    let cands = candidates(doc);
    if cands.is_empty() {
        return Err(SynthesisError::EmptyQuestion);
    }
    let scores = score_candidates(doc, &cands, stats, idf, strategy)?;
    Ok(select_top(&cands, &scores, l)
        .into_iter()
        .map(|i| cands[i].stem.clone())
        .collect())
}

/// Draw a length from `dist` with the given per-question seed, then take the
/// top stems.
pub fn extract_query(
    doc: &QuestionDoc,
    stats: &TermStats,
    dist: &LengthDistribution,
    seed: u64,
    idf: IdfVariant,
    strategy: Strategy<'_>,
) -> Result<Vec<String>, SynthesisError> {
    let mut rng = crate::seed::rng(seed, "query-length", &[]);
    let l = dist.sample(&mut rng);
    top_terms(doc, stats, idf, strategy, l)
}

#[cfg(test)]
mod tests {
    use super::Strategy;
    use super::*;
    use proptest::prelude::*;

    fn doc(title: &str, body: &str) -> QuestionDoc {
        QuestionDoc::new(&Analyzer::default(), title, body)
    }

    fn stats(texts: &[&str]) -> TermStats {
        let a = Analyzer::default();
        TermStats::build(&texts.iter().map(|t| a.tokenize(t)).collect::<Vec<_>>())
    }

    #[test]
    fn title_boundary_and_candidates() {
        let d = doc("Mail servers", "the server and the domain");
        assert_eq!(d.title_len, 2);
        let c = candidates(&d);
        let stems: Vec<_> = c.iter().map(|c| c.stem.as_str()).collect();
        assert_eq!(stems, ["mail", "server", "domain"]);
        assert_eq!(c[1].tf, 2);
        assert!(c[1].in_title);
        assert!(!c[2].in_title);
        assert_eq!(c[2].first_pos, 6);
    }

    #[test]
    fn dominant_term_is_chosen() {
        let s = stats(&["mail imap", "mail domain", "imap domain", "server", "mail", "domain", "imap"]);
        let d = doc("", "mail imap server server domain");
        let top = top_terms(&d, &s, IdfVariant::Smoothed, Strategy::TfidfTop, 1).unwrap();
        assert_eq!(top, ["server"]);
    }

    #[test]
    fn length_clamped_and_order_by_occurrence() {
        let s = stats(&["x"]);
        let d = doc("zeta alpha", "beta alpha");
        let all = top_terms(&d, &s, IdfVariant::Smoothed, Strategy::TfidfTop, 10).unwrap();
        assert_eq!(all, ["zeta", "alpha", "beta"]);
        let top1 = top_terms(&d, &s, IdfVariant::Smoothed, Strategy::TfidfTop, 1).unwrap();
        assert_eq!(top1, ["alpha"]);
    }

    #[test]
    fn ties_break_by_first_occurrence() {
        let s = stats(&["x"]);
        let d = doc("", "delta kilo bravo");
        let top = top_terms(&d, &s, IdfVariant::Smoothed, Strategy::TfidfTop, 2).unwrap();
        assert_eq!(top, ["delta", "kilo"]);
    }

    #[test]
    fn lexicographic_tiebreak() {
        let cands: Vec<Candidate> = ["b", "a"]
            .iter()
            .map(|s| Candidate {
                stem: s.to_string(),
                tf: 1,
                first_pos: 0,
                in_title: false,
                is_content: true,
            })
            .collect();
        assert_eq!(select_top(&cands, &[1.0, 1.0], 1), [1]);
    }

    #[test]
    fn empty_question() {
        let s = stats(&["x"]);
        let d = doc("", "the and of");
        assert!(matches!(
            top_terms(&d, &s, IdfVariant::Smoothed, Strategy::TfidfTop, 1),
            Err(SynthesisError::EmptyQuestion)
        ));
    }

    #[test]
    fn extraction_is_deterministic() {
        let s = stats(&["alpha beta", "gamma"]);
        let d = doc("alpha beta gamma delta", "epsilon zeta eta");
        let dist = LengthDistribution::uniform(1, 5).unwrap();
        let a = extract_query(&d, &s, &dist, 42, IdfVariant::Smoothed, Strategy::TfidfTop).unwrap();
        let b = extract_query(&d, &s, &dist, 42, IdfVariant::Smoothed, Strategy::TfidfTop).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn terms_come_from_question(words in proptest::collection::vec("[a-h]{2,6}", 1..30), seed in any::<u64>()) {
            let text = words.join(" ");
            let d = doc("", &text);
            let s = stats(&[&text, "abc def"]);
            let dist = LengthDistribution::uniform(1, 5).unwrap();
            match extract_query(&d, &s, &dist, seed, IdfVariant::Smoothed, Strategy::TfidfTop) {
                Ok(terms) => {
                    let stems: Vec<&str> = d.tokens.content_stems().collect();
                    prop_assert!(!terms.is_empty() && terms.len() <= 5);
                    for t in &terms {
                        prop_assert!(stems.contains(&t.as_str()));
                    }
                    let distinct: std::collections::BTreeSet<_> = terms.iter().collect();
                    prop_assert_eq!(distinct.len(), terms.len());
                }
                Err(SynthesisError::EmptyQuestion) => prop_assert!(d.tokens.content_stems().next().is_none()),
                Err(e) => prop_assert!(false, "{}", e),
            }
        }
    }
}
