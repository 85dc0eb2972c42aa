//! Inverted index over answer documents and Dirichlet-smoothed query
//! likelihood ranking.

mod store;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::io::{BufRead, Write};

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, PostKey};
use crate::synthesis::SyntheticQuery;
use crate::text::{strip_html, Analyzer, TokenizedText};

pub use store::{load_index, save_index, INDEX_FILE, INDEX_FORMAT_VERSION};

pub const DEFAULT_MU: f64 = 2500.0;
pub const DEFAULT_K: usize = 100;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("document {0} appears twice")]
    DuplicateDocId(PostKey),
    #[error("answer {0} has no parent question text")]
    MissingQuestionText(PostKey),
    #[error("not an index file (bad magic)")]
    BadMagic,
    #[error("unsupported index format version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Whether documents are answers alone or answers with their question
/// appended.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Raw,
    Q2a,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Raw => "raw",
            Variant::Q2a => "q2a",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Variant::Raw),
            "q2a" => Ok(Variant::Q2a),
            other => Err(format!("unknown index variant `{other}` (expected raw|q2a)")),
        }
    }
}

/// One line of a TREC run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub query_id: u64,
    pub doc_id: PostKey,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// Postings use internal document numbers, assigned in ascending doc id order.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    pub variant: Variant,
    pub mu: f64,
    pub(crate) docs: Vec<PostKey>,
    pub(crate) doc_len: Vec<u32>,
    pub(crate) collection_len: u64,
    pub(crate) vocab: Vec<String>,
    pub(crate) collection_tf: Vec<u64>,
    pub(crate) postings: Vec<Vec<(u32, u32)>>,
    pub(crate) lookup: HashMap<String, u32>,
}

/// Answer documents of every non-excluded forum. The q2a variant appends the
/// parent question's title and body to each answer before tokenization.
pub fn corpus_documents(
    corpus: &Corpus,
    analyzer: &Analyzer,
    variant: Variant,
) -> Result<Vec<(PostKey, TokenizedText)>, IndexError> {
    let answers: Vec<_> = corpus
        .answers()
        .filter(|a| !corpus.is_excluded(&a.forum_id))
        .collect();
    answers
        .par_iter()
        .map(|a| {
            let key = a.key();
            let mut text = strip_html(&a.body);
            if variant == Variant::Q2a {
                let parent = PostKey::new(a.forum_id.clone(), a.parent_id.unwrap_or(0));
                let (title, body) = corpus
                    .question_text(&parent)
                    .ok_or_else(|| IndexError::MissingQuestionText(key.clone()))?;
                text = format!("{text} {title} {body}");
            }
            Ok((key, analyzer.tokenize(&text)))
        })
        .collect()
}

type Partial = HashMap<String, Vec<(u32, u32)>>;

impl InvertedIndex {
    /// Index non-stopword stems of `docs`. Document order does not matter.
    pub fn build(
        mut docs: Vec<(PostKey, TokenizedText)>,
        variant: Variant,
        mu: f64,
    ) -> Result<Self, IndexError> {
        docs.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = docs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(IndexError::DuplicateDocId(w[0].0.clone()));
        }

        let chunk = 4096;
        let parts: Vec<(Partial, Vec<u32>)> = docs
            .par_chunks(chunk)
            .enumerate()
            .map(|(ci, part)| {
                let mut map: Partial = HashMap::new();
                let mut lens = Vec::with_capacity(part.len());
                for (j, (_, text)) in part.iter().enumerate() {
                    let doc = (ci * chunk + j) as u32;
                    let mut counts: HashMap<&str, u32> = HashMap::new();
                    let mut len = 0u32;
                    for stem in text.content_stems() {
                        *counts.entry(stem).or_default() += 1;
                        len += 1;
                    }
                    lens.push(len);
                    for (stem, c) in counts {
                        map.entry(stem.to_string()).or_default().push((doc, c));
                    }
                }
                (map, lens)
            })
            .collect();

        let mut merged: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        for (map, lens) in parts {
            doc_len.extend(lens);
            for (stem, list) in map {
                merged.entry(stem).or_default().extend(list);
            }
        }
        let mut vocab: Vec<String> = merged.keys().cloned().collect();
        vocab.sort();
        let mut postings = Vec::with_capacity(vocab.len());
        let mut collection_tf = Vec::with_capacity(vocab.len());
        for stem in &vocab {
            let mut list = merged.remove(stem).expect("vocab from keys");
            list.sort_unstable();
            collection_tf.push(list.iter().map(|&(_, c)| u64::from(c)).sum());
            postings.push(list);
        }
        let collection_len = doc_len.iter().map(|&l| u64::from(l)).sum();
        Ok(Self::from_parts(
            variant,
            mu,
            docs.into_iter().map(|(k, _)| k).collect(),
            doc_len,
            collection_len,
            vocab,
            collection_tf,
            postings,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        variant: Variant,
        mu: f64,
        docs: Vec<PostKey>,
        doc_len: Vec<u32>,
        collection_len: u64,
        vocab: Vec<String>,
        collection_tf: Vec<u64>,
        postings: Vec<Vec<(u32, u32)>>,
    ) -> Self {
        let lookup = vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        InvertedIndex {
            variant,
            mu,
            docs,
            doc_len,
            collection_len,
            vocab,
            collection_tf,
            postings,
            lookup,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn num_terms(&self) -> usize {
        self.vocab.len()
    }

    pub fn collection_len(&self) -> u64 {
        self.collection_len
    }

    pub fn doc_ids(&self) -> &[PostKey] {
        &self.docs
    }

    fn doc_number(&self, doc: &PostKey) -> Option<u32> {
        self.docs.binary_search(doc).ok().map(|i| i as u32)
    }

    pub fn doc_len(&self, doc: &PostKey) -> Option<u32> {
        self.doc_number(doc).map(|d| self.doc_len[d as usize])
    }

    pub fn collection_tf(&self, stem: &str) -> u64 {
        self.lookup.get(stem).map_or(0, |&t| self.collection_tf[t as usize])
    }

    /// `(doc id, count)` pairs for `stem`, ascending by doc id.
    pub fn postings(&self, stem: &str) -> Vec<(&PostKey, u32)> {
        self.lookup
            .get(stem)
            .map(|&t| {
                self.postings[t as usize]
                    .iter()
                    .map(|&(d, c)| (&self.docs[d as usize], c))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Distinct query terms with their query counts, in first-occurrence
    /// order; terms absent from the collection are returned separately.
    pub fn prepare(&self, terms: &[String]) -> PreparedQuery {
        let mut out = PreparedQuery::default();
        for t in terms {
            match self.lookup.get(t) {
                Some(&id) => match out.terms.iter_mut().find(|(i, _)| *i == id) {
                    Some(e) => e.1 += 1,
                    None => out.terms.push((id, 1)),
                },
                None => out.dropped.push(t.clone()),
            }
        }
        out
    }

    fn term_weight(&self, term: u32, count: u32, doc: u32) -> f64 {
        let p = self.collection_tf[term as usize] as f64 / self.collection_len as f64;
        let len = f64::from(self.doc_len[doc as usize]);
        ((f64::from(count) + self.mu * p) / (len + self.mu)).ln()
    }

    /// Query log-likelihood of `doc`:
    /// `Σ_t c(t,q) · ln((c(t,d) + μ·p(t|C)) / (|d| + μ))` over query terms
    /// present in the collection. `None` for an unknown document.
    pub fn score(&self, terms: &[String], doc: &PostKey) -> Option<f64> {
        let d = self.doc_number(doc)?;
        let q = self.prepare(terms);
        let mut s = 0.0;
        for &(t, qtf) in &q.terms {
            let list = &self.postings[t as usize];
            let c = list
                .binary_search_by_key(&d, |&(doc, _)| doc)
                .map_or(0, |i| list[i].1);
            s += f64::from(qtf) * self.term_weight(t, c, d);
        }
        Some(s)
    }

    /// Top `k` documents containing at least one query term, by descending
    /// score with ascending doc id breaking ties. Postings are traversed
    /// document at a time.
    pub fn search(&self, terms: &[String], k: usize) -> SearchResult {
        let q = self.prepare(terms);
        let mut result = SearchResult {
            hits: Vec::new(),
            dropped: q.dropped.clone(),
        };
        if q.terms.is_empty() || k == 0 {
            return result;
        }
        let lists: Vec<&[(u32, u32)]> = q.terms.iter().map(|&(t, _)| &self.postings[t as usize][..]).collect();
        let mut cursor = vec![0usize; lists.len()];
        let mut heap: BinaryHeap<Hit> = BinaryHeap::with_capacity(k + 1);
        loop {
            let next = lists
                .iter()
                .zip(&cursor)
                .filter_map(|(l, &c)| l.get(c).map(|p| p.0))
                .min();
            let Some(doc) = next else { break };
            let mut s = 0.0;
            for (i, &(t, qtf)) in q.terms.iter().enumerate() {
                let c = match lists[i].get(cursor[i]) {
                    Some(&(d, c)) if d == doc => {
                        cursor[i] += 1;
                        c
                    }
                    _ => 0,
                };
                s += f64::from(qtf) * self.term_weight(t, c, doc);
            }
            let hit = Hit { score: s, doc };
            if heap.len() < k {
                heap.push(hit);
            } else if hit < *heap.peek().expect("k >= 1") {
                heap.pop();
                heap.push(hit);
            }
        }
        let mut hits = heap.into_vec();
        hits.sort();
        result.hits = hits
            .into_iter()
            .map(|h| (self.docs[h.doc as usize].clone(), h.score))
            .collect();
        result
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreparedQuery {
    /// (term number, count in query)
    pub terms: Vec<(u32, u32)>,
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub hits: Vec<(PostKey, f64)>,
    /// Query terms not in the collection.
    pub dropped: Vec<String>,
}

impl SearchResult {
    /// No query term survived dropping.
    pub fn is_empty_query(&self) -> bool {
        self.hits.is_empty()
    }
}

/// Orders better hits first: higher score, then lower document number.
#[derive(Debug, Clone, Copy)]
struct Hit {
    score: f64,
    doc: u32,
}

impl PartialEq for Hit {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Hit {}

impl PartialOrd for Hit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Hit {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.doc.cmp(&other.doc))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchReport {
    pub queries: usize,
    pub empty_queries: usize,
    pub dropped_terms: usize,
}

/// Search every query of the log in parallel; output follows log order.
pub fn search_log(
    index: &InvertedIndex,
    log: &[SyntheticQuery],
    k: usize,
    tag: &str,
) -> (Vec<RunEntry>, BatchReport) {
    let results: Vec<SearchResult> = log.par_iter().map(|q| index.search(&q.terms, k)).collect();
    let mut report = BatchReport {
        queries: log.len(),
        ..Default::default()
    };
    let mut run = Vec::new();
    for (q, r) in log.iter().zip(results) {
        if !r.dropped.is_empty() {
            debug!("query {}: dropped unseen terms {:?}", q.query_id, r.dropped);
        }
        report.dropped_terms += r.dropped.len();
        if r.is_empty_query() {
            report.empty_queries += 1;
        }
        for (i, (doc, score)) in r.hits.into_iter().enumerate() {
            run.push(RunEntry {
                query_id: q.query_id,
                doc_id: doc,
                rank: i + 1,
                score,
                tag: tag.to_string(),
            });
        }
    }
    (run, report)
}

/// TREC run format: `query_id Q0 doc_id rank score tag`.
pub fn write_run(run: &[RunEntry], out: &mut impl Write) -> std::io::Result<()> {
    for r in run {
        writeln!(out, "{} Q0 {} {} {:.10} {}", r.query_id, r.doc_id, r.rank, r.score, r.tag)?;
    }
    Ok(())
}

pub fn read_run(input: impl BufRead) -> Result<Vec<RunEntry>, IndexError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let err = |message: String| IndexError::Parse {
            line: n + 1,
            message,
        };
        let [qid, _, doc, rank, score, tag] = f[..] else {
            return Err(err(format!("expected 6 fields, got {}", f.len())));
        };
        out.push(RunEntry {
            query_id: qid.parse().map_err(|e| err(format!("query id `{qid}`: {e}")))?,
            doc_id: doc.parse().map_err(err)?,
            rank: rank.parse().map_err(|e| err(format!("rank `{rank}`: {e}")))?,
            score: score.parse().map_err(|e| err(format!("score `{score}`: {e}")))?,
            tag: tag.to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn docs(texts: &[&str]) -> Vec<(PostKey, TokenizedText)> {
        let a = Analyzer::default();
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| (PostKey::new("f", i as u64 + 1), a.tokenize(t)))
            .collect()
    }

    fn terms(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn counting() {
        let idx = InvertedIndex::build(docs(&["aa aa bb", ""]), Variant::Raw, DEFAULT_MU).unwrap();
        let d1 = PostKey::new("f", 1);
        assert_eq!(idx.postings("aa"), [(&d1, 2)]);
        assert_eq!(idx.postings("bb"), [(&d1, 1)]);
        assert_eq!(idx.doc_len(&d1), Some(3));
        assert_eq!(idx.doc_len(&PostKey::new("f", 2)), Some(0));
        assert_eq!(idx.collection_len(), 3);
        assert_eq!(idx.collection_tf("aa"), 2);
    }

    #[test]
    fn duplicate_doc_rejected() {
        let mut d = docs(&["aa"]);
        d.push(d[0].clone());
        assert!(matches!(
            InvertedIndex::build(d, Variant::Raw, DEFAULT_MU),
            Err(IndexError::DuplicateDocId(_))
        ));
    }

    #[test]
    fn perfect_match_with_zero_mu() {
        let idx = InvertedIndex::build(docs(&["aa"]), Variant::Raw, 0.0).unwrap();
        assert_eq!(idx.score(&terms("aa"), &PostKey::new("f", 1)), Some(0.0));
    }

    #[test]
    fn smoothing_keeps_scores_finite() {
        let idx = InvertedIndex::build(docs(&["aa bb", "cc dd"]), Variant::Raw, 2000.0).unwrap();
        let hit = idx.score(&terms("aa"), &PostKey::new("f", 1)).unwrap();
        let miss = idx.score(&terms("aa"), &PostKey::new("f", 2)).unwrap();
        assert!(miss.is_finite() && miss < hit);
    }

    #[test]
    fn search_basics() {
        let idx = InvertedIndex::build(docs(&["aa bb", "cc dd", "cc"]), Variant::Raw, DEFAULT_MU).unwrap();
        let r = idx.search(&terms("aa"), 10);
        assert_eq!(r.hits.len(), 1);
        assert_eq!(r.hits[0].0, PostKey::new("f", 1));
        let r = idx.search(&terms("zz"), 10);
        assert!(r.is_empty_query());
        assert_eq!(r.dropped, ["zz"]);
        assert_eq!(idx.search(&terms("cc"), 1).hits.len(), 1);
    }

    #[test]
    fn q2a_documents_include_question() {
        use crate::corpus::tests::{answer, question};
        let mut q = question("f", 1, Some(2), None);
        q.title = Some("yak".into());
        q.body = "".into();
        let mut a = answer("f", 2, 1, None);
        a.body = "xylophone".into();
        let c = crate::corpus::link_corpus(vec![q, a], vec![], vec![]).0;
        let an = Analyzer::default();
        let raw = corpus_documents(&c, &an, Variant::Raw).unwrap();
        let q2a = corpus_documents(&c, &an, Variant::Q2a).unwrap();
        let stems = |d: &TokenizedText| d.content_stems().map(str::to_string).collect::<Vec<_>>();
        assert_eq!(stems(&raw[0].1), ["xylophon"]);
        assert_eq!(stems(&q2a[0].1), ["xylophon", "yak"]);
    }

    #[test]
    fn run_file_round_trip() {
        let run = vec![RunEntry {
            query_id: 4,
            doc_id: PostKey::new("a.se", 9),
            rank: 1,
            score: -12.5,
            tag: "raw".into(),
        }];
        let mut buf = Vec::new();
        write_run(&run, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "4 Q0 a.se/9 1 -12.5000000000 raw\n");
        assert_eq!(read_run(&buf[..]).unwrap(), run);
    }

    fn corpus_strategy() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(
            proptest::collection::vec(prop::sample::select(vec!["ka", "lo", "mi", "nu", "po", "ru", "su"]), 0..12)
                .prop_map(|w| w.join(" ")),
            1..20,
        )
    }

    proptest! {
        #[test]
        fn search_matches_exhaustive_scoring(texts in corpus_strategy(), q in proptest::collection::vec(prop::sample::select(vec!["ka", "lo", "mi", "zz"]), 1..5), k in 1usize..8) {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let idx = InvertedIndex::build(docs(&refs), Variant::Raw, 50.0).unwrap();
            let q: Vec<String> = q.into_iter().map(str::to_string).collect();
            let prepared = idx.prepare(&q);
            let mut all: Vec<(PostKey, f64)> = idx
                .doc_ids()
                .iter()
                .filter(|d| prepared.terms.iter().any(|&(t, _)| idx.postings[t as usize].iter().any(|p| idx.docs[p.0 as usize] == **d)))
                .map(|d| (d.clone(), idx.score(&q, d).unwrap()))
                .collect();
            all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            all.truncate(k);
            let got = idx.search(&q, k).hits;
            prop_assert_eq!(got, all);
        }

        #[test]
        fn insertion_order_irrelevant(texts in corpus_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let d = docs(&refs);
            let mut shuffled = d.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = InvertedIndex::build(d, Variant::Raw, DEFAULT_MU).unwrap();
            let b = InvertedIndex::build(shuffled, Variant::Raw, DEFAULT_MU).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.search(&terms("ka mi"), 5), b.search(&terms("ka mi"), 5));
        }

        #[test]
        fn zero_mu_single_term_ranks_by_relative_frequency(texts in corpus_strategy()) {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let idx = InvertedIndex::build(docs(&refs), Variant::Raw, 0.0).unwrap();
            let hits = idx.search(&terms("ka"), 100).hits;
            let rel: Vec<f64> = hits
                .iter()
                .map(|(d, _)| {
                    let c = idx.postings("ka").iter().find(|p| p.0 == d).unwrap().1;
                    f64::from(c) / f64::from(idx.doc_len(d).unwrap())
                })
                .collect();
            prop_assert!(rel.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
