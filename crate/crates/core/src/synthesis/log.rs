use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::{info, warn};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    extract_query, LengthDistribution, QrelEntry, QuestionDoc, Strategy, SynthesisError,
    SyntheticQuery,
};
use crate::corpus::{AccountId, Corpus, PostKey};
use crate::seed;
use crate::text::{strip_html, Analyzer, IdfVariant, TermStats};

/// One (question, user) ownership entry.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Holder {
    pub question: PostKey,
    pub account: AccountId,
    pub is_duplicate: bool,
}

/// Each question once for its author and once per distinct user who marked
/// it as a favorite. A user favoriting their own question adds nothing.
pub fn inject_duplicates(corpus: &Corpus, questions: &[PostKey]) -> Vec<Holder> {
    let wanted: BTreeSet<&PostKey> = questions.iter().collect();
    let mut favs: HashMap<PostKey, BTreeSet<AccountId>> = HashMap::new();
    for f in corpus.favorites() {
        let q = f.question();
        if wanted.contains(&q) {
            favs.entry(q).or_default().insert(f.account_id);
        }
    }
    let mut out = Vec::new();
    for q in wanted {
        let author = corpus.owner(q);
        if let Some(a) = author {
            out.push(Holder {
                question: q.clone(),
                account: a,
                is_duplicate: false,
            });
        }
        for &u in favs.get(q).into_iter().flatten() {
            if Some(u) != author {
                out.push(Holder {
                    question: q.clone(),
                    account: u,
                    is_duplicate: true,
                });
            }
        }
    }
    out
}

/// Drop every query of users with fewer than `min_queries` queries.
pub fn retain_users(log: &[SyntheticQuery], min_queries: usize) -> Vec<SyntheticQuery> {
    let mut counts: HashMap<AccountId, usize> = HashMap::new();
    for q in log {
        *counts.entry(q.account_id).or_default() += 1;
    }
    log.iter()
        .filter(|q| counts[&q.account_id] >= min_queries)
        .cloned()
        .collect()
}

/// Whether duplicates of a question share one sampled length or draw their own.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LengthSampling {
    #[default]
    PerQuestion,
    PerEvent,
}

impl std::str::FromStr for LengthSampling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-question" => Ok(LengthSampling::PerQuestion),
            "per-event" => Ok(LengthSampling::PerEvent),
            other => Err(format!("unknown length sampling `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeriveConfig {
    pub length: LengthDistribution,
    pub sampling: LengthSampling,
    pub min_user_queries: usize,
    pub seed: u64,
    pub idf_variant: IdfVariant,
}

impl Default for DeriveConfig {
    fn default() -> Self {
        DeriveConfig {
            length: LengthDistribution::default(),
            sampling: LengthSampling::default(),
            min_user_queries: 100,
            seed: 0,
            idf_variant: IdfVariant::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeriveReport {
    pub questions: usize,
    pub holders: usize,
    pub duplicates: usize,
    pub empty_questions: Vec<PostKey>,
    /// Queries held by synthetic per-forum owners, never part of the log.
    pub synthetic_dropped: usize,
    pub queries_before_retention: usize,
    pub users_before_retention: usize,
    pub queries: usize,
    pub users: usize,
}

/// Document frequencies over every question and answer outside excluded
/// forums.
pub fn corpus_term_stats(corpus: &Corpus, analyzer: &Analyzer) -> TermStats {
    corpus
        .posts()
        .par_chunks(512)
        .map(|chunk| {
            let mut stats = TermStats::default();
            for p in chunk.iter().filter(|p| !corpus.is_excluded(&p.forum_id)) {
                let title = p.title.as_deref().map(strip_html).unwrap_or_default();
                let text = format!("{title} {}", strip_html(&p.body));
                stats.add(&analyzer.tokenize(&text));
            }
            stats
        })
        .reduce(TermStats::default, TermStats::merge)
}

fn extraction_seed(seed: u64, q: &PostKey, account: Option<AccountId>) -> u64 {
    let mut ids = vec![seed::hash_str(&q.forum), q.post];
    if let Some(a) = account {
        ids.push(a.0 as u64);
    }
    seed::derive(seed, "extract", &ids)
}

/// Build the query log for `questions`: inject favorite duplicates, extract
/// one query per holder, order each user's history, assign ids, and retain
/// users with at least `min_user_queries` queries.
///
/// Query ids follow (user, history position) order and are assigned before
/// retention, so the retained log may have gaps.
pub fn derive_log(
    corpus: &Corpus,
    questions: &[PostKey],
    stats: &TermStats,
    analyzer: &Analyzer,
    cfg: &DeriveConfig,
    strategy: Strategy<'_>,
) -> Result<(Vec<SyntheticQuery>, DeriveReport), SynthesisError> {
    let holders = inject_duplicates(corpus, questions);
    let mut report = DeriveReport {
        questions: questions.len(),
        holders: holders.len(),
        duplicates: holders.iter().filter(|h| h.is_duplicate).count(),
        ..Default::default()
    };

    let docs: BTreeMap<&PostKey, QuestionDoc> = questions
        .par_iter()
        .map(|q| {
            QuestionDoc::from_corpus(corpus, analyzer, q)
                .map(|d| (q, d))
                .ok_or_else(|| SynthesisError::UnknownQuestion(q.clone()))
        })
        .collect::<Result<_, _>>()?;

    let extract = |q: &PostKey, account: Option<AccountId>| {
        let s = extraction_seed(cfg.seed, q, account);
        match extract_query(&docs[q], stats, &cfg.length, s, cfg.idf_variant, strategy) {
            Ok(t) => Ok(Some(t)),
            Err(SynthesisError::EmptyQuestion) => Ok(None),
            Err(e) => Err(e),
        }
    };

    let terms: Vec<Option<Vec<String>>> = match cfg.sampling {
        LengthSampling::PerQuestion => {
            let per_q: HashMap<&PostKey, Option<Vec<String>>> = docs
                .keys()
                .copied()
                .collect::<Vec<_>>()
                .par_iter()
                .map(|&q| extract(q, None).map(|t| (q, t)))
                .collect::<Result<_, _>>()?;
            holders.iter().map(|h| per_q[&h.question].clone()).collect()
        }
        LengthSampling::PerEvent => holders
            .par_iter()
            .map(|h| extract(&h.question, Some(h.account)))
            .collect::<Result<_, _>>()?,
    };

    let mut empty = BTreeSet::new();
    let mut kept: Vec<(&Holder, Vec<String>)> = Vec::new();
    for (h, t) in holders.iter().zip(terms) {
        match t {
            None => {
                empty.insert(h.question.clone());
            }
            Some(_) if h.account.is_synthetic() => report.synthetic_dropped += 1,
            Some(t) => kept.push((h, t)),
        }
    }
    if !empty.is_empty() {
        warn!("{} questions have no candidate terms", empty.len());
    }
    report.empty_questions = empty.into_iter().collect();

    kept.sort_by(|(a, _), (b, _)| {
        let pa = corpus.post(&a.question).and_then(|p| p.creation_date.as_ref());
        let pb = corpus.post(&b.question).and_then(|p| p.creation_date.as_ref());
        a.account
            .cmp(&b.account)
            .then(pa.is_none().cmp(&pb.is_none()))
            .then(pa.cmp(&pb))
            .then(a.question.cmp(&b.question))
            .then(a.is_duplicate.cmp(&b.is_duplicate))
    });

    let mut log = Vec::with_capacity(kept.len());
    let mut position: HashMap<AccountId, u64> = HashMap::new();
    for (i, (h, terms)) in kept.into_iter().enumerate() {
        let ord = position.entry(h.account).or_default();
        log.push(SyntheticQuery {
            query_id: i as u64 + 1,
            account_id: h.account,
            forum_id: h.question.forum.clone(),
            source_question_id: h.question.post,
            terms,
            is_duplicate: h.is_duplicate,
            timestamp_ord: *ord,
        });
        *ord += 1;
    }
    report.queries_before_retention = log.len();
    report.users_before_retention = position.len();

    let log = retain_users(&log, cfg.min_user_queries);
    report.queries = log.len();
    report.users = log.iter().map(|q| q.account_id).collect::<BTreeSet<_>>().len();
    info!(
        "derived {} queries for {} users ({} before retention)",
        report.queries, report.users, report.queries_before_retention
    );
    Ok((log, report))
}

/// Materialize grade-0 rows from same-forum answers to other questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeSampling {
    pub per_query: usize,
    pub seed: u64,
}

/// Accepted answer graded 2, every other answer to the source question
/// graded 1. Rows are sorted by query id, then grade descending, then doc.
pub fn derive_qrels(
    corpus: &Corpus,
    log: &[SyntheticQuery],
    negatives: Option<&NegativeSampling>,
) -> Result<Vec<QrelEntry>, SynthesisError> {
    let mut forum_answers: BTreeMap<&str, Vec<(u64, u64)>> = BTreeMap::new();
    if negatives.is_some() {
        for a in corpus.answers() {
            forum_answers
                .entry(a.forum_id.as_str())
                .or_default()
                .push((a.post_id, a.parent_id.unwrap_or(0)));
        }
    }

    let mut out = Vec::new();
    for q in log {
        let key = q.source();
        let answers = corpus.answers_of(&key);
        let accepted = corpus
            .accepted_answer(&key)
            .filter(|a| answers.contains(a))
            .ok_or_else(|| SynthesisError::MissingAcceptedAnswer(key.clone()))?;
        let row = |post, grade| QrelEntry {
            query_id: q.query_id,
            doc_id: PostKey::new(key.forum.clone(), post),
            grade,
        };
        out.push(row(accepted, 2));
        out.extend(answers.iter().filter(|&&a| a != accepted).map(|&a| row(a, 1)));

        if let Some(neg) = negatives {
            let pool: Vec<u64> = forum_answers
                .get(key.forum.as_str())
                .into_iter()
                .flatten()
                .filter(|(_, parent)| *parent != key.post)
                .map(|(id, _)| *id)
                .collect();
            let n = neg.per_query.min(pool.len());
            let mut rng = seed::rng(neg.seed, "negatives", &[q.query_id]);
            let mut picked: Vec<u64> = index::sample(&mut rng, pool.len(), n)
                .into_iter()
                .map(|i| pool[i])
                .collect();
            picked.sort_unstable();
            out.extend(picked.into_iter().map(|a| row(a, 0)));
        }
    }
    Ok(out)
}
