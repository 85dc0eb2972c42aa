//! MAP and MRR over TREC run and qrels data, averaged per user first and
//! then across users.

use std::borrow::Borrow;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::hash::Hash;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AccountId, PostKey};
use crate::retrieval::RunEntry;
use crate::synthesis::{QrelEntry, SyntheticQuery};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("run contains query {0}, which is not in the log")]
    UnknownQueryId(u64),
}

/// Mean over relevant documents of precision at their rank; relevant
/// documents missing from `ranked` count as 0. `None` when nothing is relevant.
pub fn average_precision<T, Q>(ranked: &[T], relevant: &HashSet<Q>) -> Option<f64>
where
    T: Borrow<Q>,
    Q: Eq + Hash,
{
    if relevant.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranked.iter().enumerate() {
        if relevant.contains(d.borrow()) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / relevant.len() as f64)
}

/// 1 / rank of `gold`, 0 when absent.
pub fn reciprocal_rank<T: PartialEq>(ranked: &[T], gold: &T) -> f64 {
    ranked
        .iter()
        .position(|d| d == gold)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UserEval {
    pub map: f64,
    pub mrr: f64,
    /// Queries with at least one relevant document.
    pub n_queries: usize,
    /// Queries with a grade-2 document.
    pub n_gold: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map_score: f64,
    pub mrr_score: f64,
    pub per_user: BTreeMap<AccountId, UserEval>,
    pub n_queries_evaluated: usize,
    pub n_queries_no_relevant: usize,
    pub n_users: usize,
    /// Qrels rows naming queries that are not in the log.
    pub n_qrels_skipped: usize,
    /// Deepest rank in the run; AP is computed over this cutoff.
    pub run_depth: usize,
}

/// Query id to issuing user.
pub fn user_map(log: &[SyntheticQuery]) -> BTreeMap<u64, AccountId> {
    log.iter().map(|q| (q.query_id, q.account_id)).collect()
}

/// Score every query of `users` that has relevant documents (grade ≥ 1).
/// AP treats grade ≥ 1 as relevant, RR uses the grade-2 document. Queries are
/// averaged within each user, then users are averaged.
pub fn evaluate(
    run: &[RunEntry],
    qrels: &[QrelEntry],
    users: &BTreeMap<u64, AccountId>,
) -> Result<EvalReport, EvalError> {
    let mut ranked: HashMap<u64, Vec<(usize, &PostKey)>> = HashMap::new();
    let mut run_depth = 0;
    for r in run {
        if !users.contains_key(&r.query_id) {
            return Err(EvalError::UnknownQueryId(r.query_id));
        }
        run_depth = run_depth.max(r.rank);
        ranked.entry(r.query_id).or_default().push((r.rank, &r.doc_id));
    }
    for list in ranked.values_mut() {
        list.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    }

    let mut relevant: HashMap<u64, HashSet<&PostKey>> = HashMap::new();
    let mut gold: HashMap<u64, &PostKey> = HashMap::new();
    let mut report = EvalReport {
        run_depth,
        ..Default::default()
    };
    for q in qrels {
        if !users.contains_key(&q.query_id) {
            report.n_qrels_skipped += 1;
            continue;
        }
        if q.grade >= 1 {
            relevant.entry(q.query_id).or_default().insert(&q.doc_id);
        }
        if q.grade == 2 {
            gold.insert(q.query_id, &q.doc_id);
        }
    }
    if report.n_qrels_skipped > 0 {
        warn!("{} qrels rows name unknown queries", report.n_qrels_skipped);
    }

    let mut sums: BTreeMap<AccountId, (f64, f64, usize, usize)> = BTreeMap::new();
    for (&qid, &user) in users {
        let Some(rel) = relevant.get(&qid) else {
            report.n_queries_no_relevant += 1;
            continue;
        };
        let docs: Vec<&PostKey> = ranked
            .get(&qid)
            .map(|l| l.iter().map(|(_, d)| *d).collect())
            .unwrap_or_default();
        let ap = average_precision(&docs, rel).expect("non-empty");
        let e = sums.entry(user).or_default();
        e.0 += ap;
        e.2 += 1;
        if let Some(g) = gold.get(&qid) {
            e.1 += reciprocal_rank(&docs, g);
            e.3 += 1;
        }
        report.n_queries_evaluated += 1;
    }

    let (mut map_sum, mut mrr_sum, mut mrr_users) = (0.0, 0.0, 0usize);
    for (user, (ap, rr, n, n_gold)) in sums {
        let u = UserEval {
            map: ap / n as f64,
            mrr: if n_gold > 0 { rr / n_gold as f64 } else { 0.0 },
            n_queries: n,
            n_gold,
        };
        map_sum += u.map;
        if n_gold > 0 {
            mrr_sum += u.mrr;
            mrr_users += 1;
        }
        report.per_user.insert(user, u);
    }
    report.n_users = report.per_user.len();
    if report.n_users > 0 {
        report.map_score = map_sum / report.n_users as f64;
    }
    if mrr_users > 0 {
        report.mrr_score = mrr_sum / mrr_users as f64;
    }
    Ok(report)
}

/// Plain-text results table, one row per named report.
pub fn format_table(rows: &[(&str, &EvalReport)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<12} {:>8} {:>8} {:>9} {:>7}", "Index", "MAP", "MRR", "Queries", "Users");
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<12} {:>8.4} {:>8.4} {:>9} {:>7}",
            name, r.map_score, r.mrr_score, r.n_queries_evaluated, r.n_users
        );
    }
    if let Some((_, r)) = rows.first() {
        let _ = writeln!(s, "AP over the top {} retrieved; means per user, then over users.", r.run_depth);
    }
    s
}
