//! Dump ingest: streaming parsers for `Posts.xml` / `Users.xml` / `Votes.xml`,
//! the linked in-memory [`Corpus`], its binary snapshot, and the question
//! filters and samplers.

mod filter;
mod ingest;
mod snapshot;
mod xml;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use filter::{eligible_by_forum, filter_questions, sample_questions, FilterPolicy, SampleError};
pub use ingest::{ingest_dump, ExclusionList, IngestReport};
pub use snapshot::{
    export_jsonl, read_snapshot, write_snapshot, SnapshotError, SNAPSHOT_MAGIC, SNAPSHOT_VERSION,
};
pub use xml::{parse_favorites, parse_posts, parse_users, PostsReader};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed XML at line {line}: {message}")]
    MalformedXml { line: u64, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dump directory {0} does not exist or contains no forums")]
    MissingDump(String),
}

/// Global account id. Negative values are synthetic per-forum owners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccountId(pub i64);

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl AccountId {
    pub fn is_synthetic(self) -> bool {
        self.0 < 0
    }
}

/// Corpus-wide post identity: post ids are only unique within a forum.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PostKey {
    pub forum: String,
    pub post: u64,
}

impl PostKey {
    pub fn new(forum: impl Into<String>, post: u64) -> Self {
        PostKey {
            forum: forum.into(),
            post,
        }
    }
}

impl fmt::Display for PostKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.forum, self.post)
    }
}

impl FromStr for PostKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (forum, post) = s
            .rsplit_once('/')
            .ok_or_else(|| format!("`{s}` is not a forum/post id"))?;
        let post = post
            .parse()
            .map_err(|_| format!("`{s}` has a non-numeric post id"))?;
        Ok(PostKey::new(forum, post))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    NonEnglish,
    Specialized,
    TooSmall,
}

impl FromStr for ExclusionReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "non-english" => Ok(ExclusionReason::NonEnglish),
            "specialized" => Ok(ExclusionReason::Specialized),
            "too-small" => Ok(ExclusionReason::TooSmall),
            other => Err(format!("unknown exclusion reason `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Forum {
    pub forum_id: String,
    pub question_count: u64,
    pub answer_count: u64,
    pub excluded: Option<ExclusionReason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostType {
    Question,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: u64,
    pub forum_id: String,
    pub post_type: PostType,
    pub parent_id: Option<u64>,
    pub accepted_answer_id: Option<u64>,
    /// Raw HTML; questions only.
    pub title: Option<String>,
    /// Raw HTML.
    pub body: String,
    pub owner_user_id: Option<i64>,
    pub score: i64,
    pub favorite_count: u64,
    pub creation_date: Option<String>,
}

impl Post {
    pub fn key(&self) -> PostKey {
        PostKey::new(self.forum_id.clone(), self.post_id)
    }

    pub fn is_question(&self) -> bool {
        self.post_type == PostType::Question
    }
}

/// One `Users.xml` row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRow {
    pub forum_id: String,
    pub local_id: i64,
    pub account_id: Option<i64>,
}

/// One favorite vote (`VoteTypeId="5"`) from `Votes.xml`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FavoriteRow {
    pub forum_id: String,
    pub post_id: u64,
    pub user_id: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkUser {
    pub account_id: AccountId,
    /// forum id -> local user id. Empty for synthetic owners.
    pub local_ids: BTreeMap<String, i64>,
    pub question_ids: Vec<PostKey>,
    pub answer_ids: Vec<PostKey>,
    /// Per-forum placeholder owner for posts without a global account.
    pub synthetic: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FavoriteEdge {
    pub account_id: AccountId,
    pub question_id: u64,
    pub forum_id: String,
}

impl FavoriteEdge {
    pub fn question(&self) -> PostKey {
        PostKey::new(self.forum_id.clone(), self.question_id)
    }
}

/// What linking had to drop or patch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkReport {
    pub dangling_answers: Vec<PostKey>,
    pub invalid_accepted: u64,
    pub synthetic_owned_posts: u64,
    pub duplicate_user_rows: u64,
    pub dropped_favorites: u64,
}

/// Linked, immutable corpus.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    forums: Vec<Forum>,
    posts: Vec<Post>,
    users: Vec<NetworkUser>,
    favorites: Vec<FavoriteEdge>,
    by_key: HashMap<PostKey, usize>,
    answers: HashMap<PostKey, Vec<u64>>,
    owners: HashMap<PostKey, AccountId>,
    user_index: HashMap<AccountId, usize>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.forums == other.forums
            && self.posts == other.posts
            && self.users == other.users
            && self.favorites == other.favorites
    }
}

/// Resolve posts, user rows and favorite rows from one dump snapshot into a
/// [`Corpus`].
///
/// Answers whose parent question is absent are dropped and reported. Posts
/// whose owner has no global account are attributed to a synthetic
/// per-forum owner with a negative id.
pub fn link_corpus(
    mut posts: Vec<Post>,
    users: Vec<UserRow>,
    favorites: Vec<FavoriteRow>,
) -> (Corpus, LinkReport) {
    let mut report = LinkReport::default();
    posts.sort_by(|a, b| (&a.forum_id, a.post_id).cmp(&(&b.forum_id, b.post_id)));
    posts.dedup_by(|a, b| a.forum_id == b.forum_id && a.post_id == b.post_id);

    let question_keys: BTreeSet<PostKey> = posts
        .iter()
        .filter(|p| p.is_question())
        .map(Post::key)
        .collect();
    posts.retain(|p| {
        if p.post_type == PostType::Answer {
            let ok = p
                .parent_id
                .is_some_and(|q| question_keys.contains(&PostKey::new(p.forum_id.clone(), q)));
            if !ok {
                warn!("dropping answer {} with missing parent {:?}", p.key(), p.parent_id);
                report.dangling_answers.push(p.key());
            }
            ok
        } else {
            true
        }
    });

    // Accepted answers must point at an answer of the same question.
    let parent_of: HashMap<PostKey, u64> = posts
        .iter()
        .filter_map(|p| p.parent_id.map(|q| (p.key(), q)))
        .collect();
    for p in posts.iter_mut().filter(|p| p.is_question()) {
        if let Some(a) = p.accepted_answer_id {
            let key = PostKey::new(p.forum_id.clone(), a);
            if parent_of.get(&key) != Some(&p.post_id) {
                warn!("question {} accepts non-answer {}", p.key(), key);
                p.accepted_answer_id = None;
                report.invalid_accepted += 1;
            }
        }
    }

    let forum_ids: BTreeSet<&str> = posts.iter().map(|p| p.forum_id.as_str()).collect();
    let synthetic_of: HashMap<String, AccountId> = forum_ids
        .iter()
        .enumerate()
        .map(|(i, f)| (f.to_string(), AccountId(-(i as i64) - 1)))
        .collect();

    let mut local_to_account: HashMap<(String, i64), AccountId> = HashMap::new();
    let mut accounts: BTreeMap<AccountId, NetworkUser> = BTreeMap::new();
    for row in users {
        let Some(acc) = row.account_id else { continue };
        let key = (row.forum_id.clone(), row.local_id);
        if local_to_account.contains_key(&key) {
            report.duplicate_user_rows += 1;
            continue;
        }
        let acc = AccountId(acc);
        local_to_account.insert(key, acc);
        accounts
            .entry(acc)
            .or_insert_with(|| new_user(acc, false))
            .local_ids
            .insert(row.forum_id, row.local_id);
    }

    let mut owners = HashMap::new();
    for p in &posts {
        let acc = p
            .owner_user_id
            .and_then(|u| local_to_account.get(&(p.forum_id.clone(), u)).copied())
            .unwrap_or_else(|| {
                report.synthetic_owned_posts += 1;
                synthetic_of[&p.forum_id]
            });
        let user = accounts
            .entry(acc)
            .or_insert_with(|| new_user(acc, acc.is_synthetic()));
        match p.post_type {
            PostType::Question => user.question_ids.push(p.key()),
            PostType::Answer => user.answer_ids.push(p.key()),
        }
        owners.insert(p.key(), acc);
    }

    let mut edges = BTreeSet::new();
    for f in favorites {
        let q = PostKey::new(f.forum_id.clone(), f.post_id);
        let acc = f
            .user_id
            .and_then(|u| local_to_account.get(&(f.forum_id.clone(), u)).copied());
        match acc {
            Some(acc) if question_keys.contains(&q) => {
                edges.insert(FavoriteEdge {
                    account_id: acc,
                    question_id: f.post_id,
                    forum_id: f.forum_id,
                });
            }
            _ => report.dropped_favorites += 1,
        }
    }

    let mut forums: BTreeMap<String, Forum> = BTreeMap::new();
    for p in &posts {
        let f = forums.entry(p.forum_id.clone()).or_insert_with(|| Forum {
            forum_id: p.forum_id.clone(),
            question_count: 0,
            answer_count: 0,
            excluded: None,
        });
        match p.post_type {
            PostType::Question => f.question_count += 1,
            PostType::Answer => f.answer_count += 1,
        }
    }

    let corpus = Corpus::from_parts(
        forums.into_values().collect(),
        posts,
        accounts.into_values().collect(),
        edges.into_iter().collect(),
    );
    debug_assert_eq!(corpus.owners, owners);
    (corpus, report)
}

fn new_user(acc: AccountId, synthetic: bool) -> NetworkUser {
    NetworkUser {
        account_id: acc,
        local_ids: BTreeMap::new(),
        question_ids: Vec::new(),
        answer_ids: Vec::new(),
        synthetic,
    }
}

impl Corpus {
    /// Rebuild the derived lookups from stored parts. Inputs must already be
    /// linked (as produced by [`link_corpus`] or read from a snapshot).
    pub fn from_parts(
        mut forums: Vec<Forum>,
        posts: Vec<Post>,
        users: Vec<NetworkUser>,
        favorites: Vec<FavoriteEdge>,
    ) -> Self {
        forums.sort_by(|a, b| a.forum_id.cmp(&b.forum_id));
        let by_key = posts.iter().enumerate().map(|(i, p)| (p.key(), i)).collect();
        let mut answers: HashMap<PostKey, Vec<u64>> = HashMap::new();
        for p in &posts {
            match p.post_type {
                PostType::Question => {
                    answers.entry(p.key()).or_default();
                }
                PostType::Answer => {
                    if let Some(q) = p.parent_id {
                        answers
                            .entry(PostKey::new(p.forum_id.clone(), q))
                            .or_default()
                            .push(p.post_id);
                    }
                }
            }
        }
        for list in answers.values_mut() {
            list.sort_unstable();
        }
        let mut owners = HashMap::new();
        for u in &users {
            for k in u.question_ids.iter().chain(&u.answer_ids) {
                owners.insert(k.clone(), u.account_id);
            }
        }
        let user_index = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.account_id, i))
            .collect();
        Corpus {
            forums,
            posts,
            users,
            favorites,
            by_key,
            answers,
            owners,
            user_index,
        }
    }

    /// Record a forum that was excluded before parsing.
    pub fn add_excluded_forum(&mut self, forum_id: &str, reason: ExclusionReason) {
        match self.forums.iter_mut().find(|f| f.forum_id == forum_id) {
            Some(f) => f.excluded = Some(reason),
            None => {
                self.forums.push(Forum {
                    forum_id: forum_id.to_string(),
                    question_count: 0,
                    answer_count: 0,
                    excluded: Some(reason),
                });
                self.forums.sort_by(|a, b| a.forum_id.cmp(&b.forum_id));
            }
        }
    }

    pub fn forums(&self) -> &[Forum] {
        &self.forums
    }

    pub fn forum(&self, forum_id: &str) -> Option<&Forum> {
        self.forums.iter().find(|f| f.forum_id == forum_id)
    }

    pub fn is_excluded(&self, forum_id: &str) -> bool {
        self.forum(forum_id).is_none_or(|f| f.excluded.is_some())
    }

    /// All posts ordered by (forum, post id).
    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn post(&self, key: &PostKey) -> Option<&Post> {
        self.by_key.get(key).map(|&i| &self.posts[i])
    }

    pub fn questions(&self) -> impl Iterator<Item = &Post> {
        self.posts.iter().filter(|p| p.is_question())
    }

    pub fn answers(&self) -> impl Iterator<Item = &Post> {
        self.posts.iter().filter(|p| !p.is_question())
    }

    /// Answer ids of a question, ascending.
    pub fn answers_of(&self, question: &PostKey) -> &[u64] {
        self.answers.get(question).map_or(&[], Vec::as_slice)
    }

    pub fn accepted_answer(&self, question: &PostKey) -> Option<u64> {
        self.post(question).and_then(|p| p.accepted_answer_id)
    }

    pub fn owner(&self, key: &PostKey) -> Option<AccountId> {
        self.owners.get(key).copied()
    }

    pub fn users(&self) -> &[NetworkUser] {
        &self.users
    }

    pub fn user(&self, account: AccountId) -> Option<&NetworkUser> {
        self.user_index.get(&account).map(|&i| &self.users[i])
    }

    pub fn favorites(&self) -> &[FavoriteEdge] {
        &self.favorites
    }

    /// Plain text of a question: stripped title followed by stripped body.
    pub fn question_text(&self, question: &PostKey) -> Option<(String, String)> {
        let p = self.post(question)?;
        let title = p.title.as_deref().map(crate::text::strip_html).unwrap_or_default();
        Some((title, crate::text::strip_html(&p.body)))
    }
}
