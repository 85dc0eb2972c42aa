use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Corpus, PostKey};
use crate::seed;

/// Question eligibility thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterPolicy {
    /// Forums with fewer questions than this contribute nothing.
    pub min_forum_questions: u64,
    /// Non-accepted answers a question needs besides its accepted one.
    pub min_other_answers: usize,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            min_forum_questions: 100,
            min_other_answers: 5,
        }
    }
}

/// Questions with an accepted answer and at least `min_other_answers` other
/// answers, from forums that are neither excluded nor too small.
pub fn filter_questions(corpus: &Corpus, policy: &FilterPolicy) -> BTreeSet<PostKey> {
    let usable: BTreeSet<&str> = corpus
        .forums()
        .iter()
        .filter(|f| f.excluded.is_none() && f.question_count >= policy.min_forum_questions)
        .map(|f| f.forum_id.as_str())
        .collect();
    corpus
        .questions()
        .filter(|q| usable.contains(q.forum_id.as_str()))
        .filter(|q| {
            let key = q.key();
            let Some(accepted) = q.accepted_answer_id else {
                return false;
            };
            let answers = corpus.answers_of(&key);
            let others = answers.iter().filter(|&&a| a != accepted).count();
            answers.contains(&accepted) && others >= policy.min_other_answers
        })
        .map(|q| q.key())
        .collect()
}

/// Group question keys by forum, ids ascending.
pub fn eligible_by_forum(questions: &BTreeSet<PostKey>) -> BTreeMap<String, Vec<u64>> {
    let mut out: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for k in questions {
        out.entry(k.forum.clone()).or_default().push(k.post);
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SampleError {
    #[error("only {available} forums have at least {per_forum} eligible questions, {needed} requested")]
    InsufficientForums {
        needed: usize,
        available: usize,
        per_forum: usize,
    },
}

/// Draw `n_forums` forums uniformly without replacement among those with at
/// least `n_per_forum` eligible questions, then `n_per_forum` questions from
/// each. Output is sorted by (forum, question id).
pub fn sample_questions(
    eligible: &BTreeMap<String, Vec<u64>>,
    n_forums: usize,
    n_per_forum: usize,
    seed: u64,
) -> Result<Vec<PostKey>, SampleError> {
    if n_forums == 0 {
        return Ok(Vec::new());
    }
    let candidates: Vec<(&String, &Vec<u64>)> = eligible
        .iter()
        .filter(|(_, qs)| qs.len() >= n_per_forum)
        .collect();
    if candidates.len() < n_forums {
        return Err(SampleError::InsufficientForums {
            needed: n_forums,
            available: candidates.len(),
            per_forum: n_per_forum,
        });
    }
    let mut rng = seed::rng(seed, "sample-forums", &[]);
    let mut picked: Vec<usize> = index::sample(&mut rng, candidates.len(), n_forums).into_vec();
    picked.sort_unstable();

    let mut out = Vec::with_capacity(n_forums * n_per_forum);
    for i in picked {
        let (forum, questions) = candidates[i];
        let mut ids = questions.clone();
        ids.sort_unstable();
        let mut rng = seed::rng(seed, "sample-questions", &[seed::hash_str(forum)]);
        let mut chosen: Vec<u64> = index::sample(&mut rng, ids.len(), n_per_forum)
            .into_iter()
            .map(|j| ids[j])
            .collect();
        chosen.sort_unstable();
        out.extend(chosen.into_iter().map(|q| PostKey::new(forum.clone(), q)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::link_corpus;
    use crate::corpus::tests::{answer, question};
    use proptest::prelude::*;

    fn corpus_with(answers: &[(u64, usize, bool)]) -> Corpus {
        // (question id, number of answers, first answer accepted)
        let mut posts = Vec::new();
        let mut next = 1000;
        for &(q, n, acc) in answers {
            let first = next;
            posts.push(question("f", q, acc.then_some(first), None));
            for _ in 0..n {
                posts.push(answer("f", next, q, None));
                next += 1;
            }
        }
        link_corpus(posts, vec![], vec![]).0
    }

    fn policy(min_other: usize) -> FilterPolicy {
        FilterPolicy {
            min_forum_questions: 0,
            min_other_answers: min_other,
        }
    }

    #[test]
    fn threshold_boundaries() {
        let c = corpus_with(&[(1, 6, true), (2, 5, true), (3, 6, false)]);
        let kept = filter_questions(&c, &policy(5));
        assert!(kept.contains(&PostKey::new("f", 1)));
        assert!(!kept.contains(&PostKey::new("f", 2)));
        assert!(!kept.contains(&PostKey::new("f", 3)));
    }

    #[test]
    fn small_and_excluded_forums_removed() {
        let c = corpus_with(&[(1, 6, true)]);
        let p = FilterPolicy {
            min_forum_questions: 2,
            min_other_answers: 0,
        };
        assert!(filter_questions(&c, &p).is_empty());
        let mut c = c;
        c.add_excluded_forum("f", crate::corpus::ExclusionReason::NonEnglish);
        assert!(filter_questions(&c, &policy(0)).is_empty());
    }

    fn eligible(forums: usize, per: usize) -> BTreeMap<String, Vec<u64>> {
        (0..forums)
            .map(|f| (format!("forum{f:02}"), (0..per as u64).map(|q| q * 3 + 1).collect()))
            .collect()
    }

    #[test]
    fn sample_sizes_and_determinism() {
        let e = eligible(75, 120);
        let s = sample_questions(&e, 50, 100, 7).unwrap();
        assert_eq!(s.len(), 5000);
        assert_eq!(s.iter().map(|k| &k.forum).collect::<BTreeSet<_>>().len(), 50);
        let mut sorted = s.clone();
        sorted.sort();
        assert_eq!(s, sorted);
        assert_eq!(s, sample_questions(&e, 50, 100, 7).unwrap());
        assert_ne!(s, sample_questions(&e, 50, 100, 8).unwrap());
        assert!(sample_questions(&e, 0, 100, 7).unwrap().is_empty());
    }

    #[test]
    fn small_forums_not_drawn() {
        let mut e = eligible(3, 10);
        e.insert("tiny".into(), vec![1, 2]);
        let s = sample_questions(&e, 3, 10, 1).unwrap();
        assert!(s.iter().all(|k| k.forum != "tiny"));
        assert_eq!(
            sample_questions(&e, 4, 10, 1),
            Err(SampleError::InsufficientForums { needed: 4, available: 3, per_forum: 10 })
        );
    }

    proptest! {
        #[test]
        fn relaxing_threshold_never_shrinks(spec in proptest::collection::vec((0usize..9, any::<bool>()), 1..20), t in 0usize..8) {
            let spec: Vec<_> = spec.into_iter().enumerate().map(|(i, (n, a))| (i as u64 + 1, n, a)).collect();
            let c = corpus_with(&spec);
            let strict = filter_questions(&c, &policy(t + 1));
            let relaxed = filter_questions(&c, &policy(t));
            prop_assert!(strict.is_subset(&relaxed));
        }
    }
}
