use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{link_corpus, Corpus, ExclusionReason, FavoriteRow, IngestError, LinkReport, Post, UserRow};

/// Forums to leave out of the corpus entirely.
///
/// File format: one forum id per line, optionally followed by whitespace and
/// a reason (`non-english`, `specialized`, `too-small`; default
/// `specialized`). `#` starts a comment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionList {
    pub forums: BTreeMap<String, ExclusionReason>,
}

impl Default for ExclusionList {
    /// Stack Overflow only.
    fn default() -> Self {
        let mut forums = BTreeMap::new();
        forums.insert("stackoverflow.com".to_string(), ExclusionReason::Specialized);
        ExclusionList { forums }
    }
}

impl ExclusionList {
    pub fn empty() -> Self {
        ExclusionList {
            forums: BTreeMap::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut forums = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let forum = parts.next().unwrap_or_default();
            let reason = match parts.next() {
                Some(r) => r.parse().map_err(|e| format!("line {}: {e}", n + 1))?,
                None => ExclusionReason::Specialized,
            };
            forums.insert(forum.to_string(), reason);
        }
        Ok(ExclusionList { forums })
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text).map_err(|message| IngestError::MalformedXml { line: 0, message })
    }

    pub fn reason(&self, forum: &str) -> Option<ExclusionReason> {
        self.forums.get(forum).copied()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub forums_parsed: usize,
    pub forums_excluded: usize,
    pub posts: u64,
    /// Rows with a PostTypeId other than question/answer.
    pub skipped_rows: u64,
    pub link: LinkReport,
}

struct ForumDump {
    posts: Vec<Post>,
    users: Vec<UserRow>,
    favorites: Vec<FavoriteRow>,
    skipped: u64,
}

fn open(path: &Path) -> Result<Option<BufReader<File>>, IngestError> {
    match File::open(path) {
        Ok(f) => Ok(Some(BufReader::with_capacity(1 << 16, f))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(IngestError::Io {
            path: path.display().to_string(),
            source,
        }),
    }
}

fn parse_forum(dir: &Path, forum: &str) -> Result<ForumDump, IngestError> {
    let posts_path = dir.join("Posts.xml");
    let Some(input) = open(&posts_path)? else {
        return Err(IngestError::Io {
            path: posts_path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "Posts.xml missing"),
        });
    };
    let mut reader = super::parse_posts(input, forum);
    let posts = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    let skipped = reader.skipped();

    let users = match open(&dir.join("Users.xml"))? {
        Some(r) => super::parse_users(r, forum)?,
        None => {
            warn!("{forum}: no Users.xml, all posts get the synthetic owner");
            Vec::new()
        }
    };
    let favorites = match open(&dir.join("Votes.xml"))? {
        Some(r) => super::parse_favorites(r, forum)?,
        None => Vec::new(),
    };
    Ok(ForumDump {
        posts,
        users,
        favorites,
        skipped,
    })
}

/// Parse every forum directory under `dump_dir` (in parallel) and link the
/// result. Forums on the exclusion list are not parsed; they appear in the
/// corpus forum table with their reason.
pub fn ingest_dump(
    dump_dir: &Path,
    exclusions: &ExclusionList,
) -> Result<(Corpus, IngestReport), IngestError> {
    let missing = || IngestError::MissingDump(dump_dir.display().to_string());
    let entries = std::fs::read_dir(dump_dir).map_err(|_| missing())?;
    let mut forums: Vec<String> = entries
        .filter_map(Result::ok)
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str().map(str::to_string))
        .collect();
    forums.sort();
    if forums.is_empty() {
        return Err(missing());
    }

    let (excluded, included): (Vec<_>, Vec<_>) = forums
        .into_iter()
        .partition(|f| exclusions.reason(f).is_some());

    let dumps: Vec<ForumDump> = included
        .par_iter()
        .map(|f| parse_forum(&dump_dir.join(f), f))
        .collect::<Result<_, _>>()?;

    let mut report = IngestReport {
        forums_parsed: included.len(),
        forums_excluded: excluded.len(),
        ..Default::default()
    };
    let mut posts = Vec::new();
    let mut users = Vec::new();
    let mut favorites = Vec::new();
    for d in dumps {
        report.skipped_rows += d.skipped;
        posts.extend(d.posts);
        users.extend(d.users);
        favorites.extend(d.favorites);
    }
    report.posts = posts.len() as u64;

    let (mut corpus, link) = link_corpus(posts, users, favorites);
    for f in &excluded {
        corpus.add_excluded_forum(f, exclusions.reason(f).expect("partitioned"));
    }
    report.link = link;
    info!(
        "ingested {} forums ({} excluded), {} posts",
        report.forums_parsed, report.forums_excluded, report.posts
    );
    Ok((corpus, report))
}
