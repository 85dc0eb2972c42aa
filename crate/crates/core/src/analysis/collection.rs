use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::AccountId;
use crate::synthesis::SyntheticQuery;

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of<I: IntoIterator<Item = f64>>(xs: I) -> Self {
        let xs: Vec<f64> = xs.into_iter().collect();
        if xs.is_empty() {
            return MeanSd::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        MeanSd { mean, sd: var.sqrt() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_users: usize,
    pub n_queries: usize,
    /// Queries with distinct term sequences.
    pub n_distinct_queries: usize,
    pub n_duplicate_queries: usize,
    pub n_documents: usize,
    pub n_forums: usize,
    pub query_length: MeanSd,
    pub document_length: MeanSd,
    /// Queries per user.
    pub profile_size: MeanSd,
    /// Distinct forums per user.
    pub topics_per_profile: MeanSd,
    /// Profile size -> users.
    pub profile_size_hist: BTreeMap<usize, usize>,
    /// Distinct forums per user -> users.
    pub topics_per_profile_hist: BTreeMap<usize, usize>,
    /// Number of forums a query text was derived from -> distinct query
    /// texts. Texts from a single forum are left out.
    pub ambiguity_hist: BTreeMap<usize, usize>,
    /// Query length -> queries.
    pub query_length_hist: BTreeMap<usize, usize>,
}

/// Collection statistics of a derived log and its documents' token lengths.
pub fn corpus_stats(log: &[SyntheticQuery], doc_lengths: &[u64]) -> CorpusStats {
    let mut per_user: BTreeMap<AccountId, (usize, BTreeSet<&str>)> = BTreeMap::new();
    let mut texts: HashMap<String, BTreeSet<&str>> = HashMap::new();
    let mut forums = BTreeSet::new();
    let mut query_length_hist = BTreeMap::new();
    for q in log {
        let e = per_user.entry(q.account_id).or_default();
        e.0 += 1;
        e.1.insert(&q.forum_id);
        texts.entry(q.terms.join(" ")).or_default().insert(&q.forum_id);
        forums.insert(q.forum_id.as_str());
        *query_length_hist.entry(q.terms.len()).or_default() += 1;
    }
    let mut profile_size_hist = BTreeMap::new();
    let mut topics_per_profile_hist = BTreeMap::new();
    for (n, topics) in per_user.values() {
        *profile_size_hist.entry(*n).or_default() += 1;
        *topics_per_profile_hist.entry(topics.len()).or_default() += 1;
    }
    let mut ambiguity_hist = BTreeMap::new();
    for fs in texts.values().filter(|f| f.len() > 1) {
        *ambiguity_hist.entry(fs.len()).or_default() += 1;
    }
    CorpusStats {
        n_users: per_user.len(),
        n_queries: log.len(),
        n_distinct_queries: texts.len(),
        n_duplicate_queries: log.iter().filter(|q| q.is_duplicate).count(),
        n_documents: doc_lengths.len(),
        n_forums: forums.len(),
        query_length: MeanSd::of(log.iter().map(|q| q.terms.len() as f64)),
        document_length: MeanSd::of(doc_lengths.iter().map(|&l| l as f64)),
        profile_size: MeanSd::of(per_user.values().map(|(n, _)| *n as f64)),
        topics_per_profile: MeanSd::of(per_user.values().map(|(_, t)| t.len() as f64)),
        profile_size_hist,
        topics_per_profile_hist,
        ambiguity_hist,
        query_length_hist,
    }
}

fn write_hist(path: &Path, header: &str, h: &BTreeMap<usize, usize>) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{header}")?;
    for (k, v) in h {
        writeln!(f, "{k},{v}")?;
    }
    f.flush()
}

/// One CSV per histogram in `dir`.
pub fn write_histograms(stats: &CorpusStats, dir: &Path) -> std::io::Result<()> {
    write_hist(&dir.join("profile_size.csv"), "queries,users", &stats.profile_size_hist)?;
    write_hist(&dir.join("topics_per_profile.csv"), "forums,users", &stats.topics_per_profile_hist)?;
    write_hist(&dir.join("query_ambiguity.csv"), "forums,queries", &stats.ambiguity_hist)?;
    write_hist(&dir.join("query_length.csv"), "terms,queries", &stats.query_length_hist)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(id: u64, user: i64, forum: &str, terms: &str) -> SyntheticQuery {
        SyntheticQuery {
            query_id: id,
            account_id: AccountId(user),
            forum_id: forum.into(),
            source_question_id: id,
            terms: terms.split_whitespace().map(str::to_string).collect(),
            is_duplicate: false,
            timestamp_ord: 0,
        }
    }

    #[test]
    fn single_user() {
        let log = vec![q(1, 1, "a", "x"), q(2, 1, "a", "y z"), q(3, 1, "b", "x")];
        let s = corpus_stats(&log, &[10, 20]);
        assert_eq!(s.profile_size, MeanSd { mean: 3.0, sd: 0.0 });
        assert_eq!(s.n_distinct_queries, 2);
        assert_eq!(s.n_forums, 2);
        assert_eq!(s.document_length, MeanSd { mean: 15.0, sd: 5.0 });
        assert_eq!(s.ambiguity_hist, BTreeMap::from([(2, 1)]));
        assert_eq!(s.topics_per_profile_hist, BTreeMap::from([(2, 1)]));
    }

    #[test]
    fn single_topic_texts_excluded() {
        let log = vec![q(1, 1, "a", "x"), q(2, 2, "a", "x"), q(3, 3, "b", "y")];
        let s = corpus_stats(&log, &[]);
        assert!(s.ambiguity_hist.is_empty());
        assert_eq!(s.profile_size_hist, BTreeMap::from([(1, 3)]));
        assert_eq!(s.profile_size_hist.values().sum::<usize>(), s.n_users);
        assert_eq!(s.query_length_hist.values().sum::<usize>(), s.n_queries);
    }

    #[test]
    fn csv_files() {
        let dir = tempfile::tempdir().unwrap();
        let s = corpus_stats(&[q(1, 1, "a", "x"), q(2, 2, "b", "x")], &[]);
        write_histograms(&s, dir.path()).unwrap();
        let amb = std::fs::read_to_string(dir.path().join("query_ambiguity.csv")).unwrap();
        assert_eq!(amb, "forums,queries\n2,1\n");
    }
}
