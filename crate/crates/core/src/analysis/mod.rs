//! Descriptive statistics: title and sentence coverage of queries, query word
//! position/class/frequency, annotator agreement, and collection statistics.

mod collection;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::ranker::QuestionQueryPair;
use crate::synthesis::candidates;
use crate::text::{Analyzer, WordClass};

pub use collection::{corpus_stats, write_histograms, CorpusStats, MeanSd};

/// Mean of values summed in sorted order, so the result does not depend on
/// input order.
pub(crate) fn stable_mean(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    Some(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Split on `.`, `!` or `?` followed by whitespace.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(j, n)) = chars.peek() {
                if n.is_whitespace() {
                    let s = text[start..=i].trim();
                    if !s.is_empty() {
                        out.push(s);
                    }
                    start = j;
                }
            }
        }
    }
    let s = text[start..].trim();
    if !s.is_empty() {
        out.push(s);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub n_pairs: usize,
    /// Fraction of pairs with at least one query word from the title.
    pub title_word_chosen_rate: f64,
    /// Mean over pairs of (title tokens whose stem is in the query) / title length.
    pub title_coverage: f64,
    /// Same normalization for the first sentence (the title when present).
    pub first_sentence_coverage: f64,
    pub last_sentence_coverage: f64,
    /// Fraction of query words whose stem also occurs in the title.
    pub title_query_mass: f64,
    /// Fraction of query words occurring in the title and nowhere in the body.
    pub title_exclusive_query_mass: f64,
    /// Fraction of query words absent from the question.
    pub own_word_rate: f64,
    /// Query words occurring in the question, by decile of the relative
    /// position of their first occurrence.
    pub decile_mass: [f64; 10],
    /// No query word occurred in any question; `decile_mass` is all zero.
    pub decile_mass_empty: bool,
    pub content_fraction: f64,
    pub tf_norm_query: f64,
    pub tf_norm_nonquery: f64,
}

/// Token-level coverage: tokens of `part` whose stem is in `query`, over
/// the number of tokens in `part`.
fn coverage(analyzer: &Analyzer, part: &str, query: &BTreeSet<&str>) -> Option<f64> {
    let toks = analyzer.tokenize(part);
    if toks.is_empty() {
        return None;
    }
    let hit = toks.tokens.iter().filter(|t| query.contains(t.stem.as_str())).count();
    Some(hit as f64 / toks.len() as f64)
}

/// Aggregate question-query pair measurements. Stopwords are kept: every
/// token counts as a word.
pub fn pair_stats(pairs: &[QuestionQueryPair], analyzer: &Analyzer) -> PairStats {
    let mut title_chosen = 0usize;
    let mut title_cov = Vec::new();
    let mut first_cov = Vec::new();
    let mut last_cov = Vec::new();
    let mut query_words = 0usize;
    let mut own = 0usize;
    let mut content = 0usize;
    let mut from_title = 0usize;
    let mut title_only = 0usize;
    let mut deciles = [0usize; 10];
    let mut tf_q = Vec::new();
    let mut tf_n = Vec::new();

    for p in pairs {
        let q = &p.question;
        let query = p.query_stems();
        let title_stems: HashSet<&str> = q.tokens.tokens[..q.title_len].iter().map(|t| t.stem.as_str()).collect();
        let body_stems: HashSet<&str> = q.tokens.tokens[q.title_len..].iter().map(|t| t.stem.as_str()).collect();

        if query.iter().any(|s| title_stems.contains(s)) {
            title_chosen += 1;
        }
        title_cov.extend(coverage(analyzer, &p.title, &query));

        let mut sentences: Vec<&str> = Vec::new();
        if !p.title.trim().is_empty() {
            sentences.push(&p.title);
        }
        sentences.extend(split_sentences(&p.body));
        if let (Some(first), Some(last)) = (sentences.first(), sentences.last()) {
            first_cov.extend(coverage(analyzer, first, &query));
            last_cov.extend(coverage(analyzer, last, &query));
        }

        let len = q.len().max(1) as f64;
        for (t, &is_own) in p.query.tokens.iter().zip(&p.own_word_flags) {
            query_words += 1;
            if t.word_class == WordClass::Content {
                content += 1;
            }
            if is_own {
                own += 1;
                continue;
            }
            let stem = t.stem.as_str();
            if title_stems.contains(stem) {
                from_title += 1;
                if !body_stems.contains(stem) {
                    title_only += 1;
                }
            }
            let first = q.tokens.tokens.iter().position(|x| x.stem == stem).expect("not own");
            let d = ((first as f64 / len) * 10.0).floor() as usize;
            deciles[d.min(9)] += 1;
        }

        for c in candidates(q) {
            let tf = c.tf as f64 / len;
            if query.contains(c.stem.as_str()) {
                tf_q.push(tf);
            } else {
                tf_n.push(tf);
            }
        }
    }

    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let located: usize = deciles.iter().sum();
    let mut decile_mass = [0.0; 10];
    for (m, &c) in decile_mass.iter_mut().zip(&deciles) {
        *m = frac(c, located);
    }
    PairStats {
        n_pairs: pairs.len(),
        title_word_chosen_rate: frac(title_chosen, pairs.len()),
        title_coverage: stable_mean(title_cov).unwrap_or(0.0),
        first_sentence_coverage: stable_mean(first_cov).unwrap_or(0.0),
        last_sentence_coverage: stable_mean(last_cov).unwrap_or(0.0),
        title_query_mass: frac(from_title, query_words),
        title_exclusive_query_mass: frac(title_only, query_words),
        own_word_rate: frac(own, query_words),
        decile_mass,
        decile_mass_empty: located == 0,
        content_fraction: frac(content, query_words),
        tf_norm_query: stable_mean(tf_q).unwrap_or(0.0),
        tf_norm_nonquery: stable_mean(tf_n).unwrap_or(0.0),
    }
}

/// |a ∩ b| / |a ∪ b|; two empty sets count as identical.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        warn!("jaccard of two empty sets taken as 1");
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionAgreement {
    pub forum_id: String,
    pub title: String,
    pub n_queries: usize,
    pub mean_jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub mean_jaccard: f64,
    pub per_question: Vec<QuestionAgreement>,
    /// Questions with a single query.
    pub n_questions_skipped: usize,
}

/// Mean Jaccard over unordered query pairs within each question (same forum,
/// title and body), then over questions with at least two queries.
pub fn agreement_report(pairs: &[QuestionQueryPair]) -> AgreementReport {
    let mut groups: BTreeMap<(&str, &str, &str), Vec<BTreeSet<&str>>> = BTreeMap::new();
    for p in pairs {
        groups
            .entry((&p.forum_id, &p.title, &p.body))
            .or_default()
            .push(p.query_stems());
    }
    let mut per_question = Vec::new();
    let mut skipped = 0;
    for ((forum, title, _), queries) in groups {
        if queries.len() < 2 {
            skipped += 1;
            continue;
        }
        let mut sims = Vec::new();
        for i in 0..queries.len() {
            for j in i + 1..queries.len() {
                sims.push(jaccard(&queries[i], &queries[j]));
            }
        }
        per_question.push(QuestionAgreement {
            forum_id: forum.to_string(),
            title: title.to_string(),
            n_queries: queries.len(),
            mean_jaccard: stable_mean(sims).expect("at least one pair"),
        });
    }
    AgreementReport {
        mean_jaccard: stable_mean(per_question.iter().map(|q| q.mean_jaccard).collect()).unwrap_or(0.0),
        per_question,
        n_questions_skipped: skipped,
    }
}
