//! Binary corpus snapshot (`corpus.snap`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! header   : b"CQAC" | u32 version
//! record*  : u8 tag | u32 payload_len | payload
//! trailer  : tag 0xFF with payload u64 record_count
//!
//! str      : u32 byte_len | utf-8 bytes
//! opt<T>   : u8 (0 = absent, 1 = present) | T
//! key      : str forum | u64 post
//!
//! tag 1 forum    : str id | u64 questions | u64 answers | u8 excluded
//!                  (0 none, 1 non-english, 2 specialized, 3 too-small)
//! tag 2 post     : str forum | u64 id | u8 type (1 question, 2 answer)
//!                  | opt<u64> parent | opt<u64> accepted | opt<str> title
//!                  | str body | opt<i64> owner | i64 score | u64 favorites
//!                  | opt<str> creation_date
//! tag 3 user     : i64 account | u8 synthetic | u32 n (str forum | i64 local)*n
//!                  | u32 n key*n (questions) | u32 n key*n (answers)
//! tag 4 favorite : i64 account | str forum | u64 question
//! ```
//!
//! Derived lookups (adjacency, owners) are rebuilt on load.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::Serialize;
use thiserror::Error;

use super::{
    AccountId, Corpus, ExclusionReason, FavoriteEdge, Forum, NetworkUser, Post, PostKey, PostType,
};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"CQAC";
pub const SNAPSHOT_VERSION: u32 = 1;

const TAG_FORUM: u8 = 1;
const TAG_POST: u8 = 2;
const TAG_USER: u8 = 3;
const TAG_FAVORITE: u8 = 4;
const TAG_END: u8 = 0xFF;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("not a corpus snapshot (bad magic)")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn opt<T>(&mut self, v: Option<T>, f: impl FnOnce(&mut Self, T)) {
        match v {
            Some(v) => {
                self.u8(1);
                f(self, v);
            }
            None => self.u8(0),
        }
    }
    fn key(&mut self, k: &PostKey) {
        self.str(&k.forum);
        self.u64(k.post);
    }
    fn keys(&mut self, ks: &[PostKey]) {
        self.u32(ks.len() as u32);
        for k in ks {
            self.key(k);
        }
    }
}

struct Dec<'a> {
    buf: &'a [u8],
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        if self.buf.len() < n {
            return Err(SnapshotError::Corrupt("record payload truncated".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, SnapshotError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn i64(&mut self) -> Result<i64, SnapshotError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String, SnapshotError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| SnapshotError::Corrupt("invalid utf-8".into()))
    }
    fn opt<T>(
        &mut self,
        f: impl FnOnce(&mut Self) -> Result<T, SnapshotError>,
    ) -> Result<Option<T>, SnapshotError> {
        match self.u8()? {
            0 => Ok(None),
            1 => f(self).map(Some),
            b => Err(SnapshotError::Corrupt(format!("bad option flag {b}"))),
        }
    }
    fn key(&mut self) -> Result<PostKey, SnapshotError> {
        Ok(PostKey {
            forum: self.str()?,
            post: self.u64()?,
        })
    }
    fn keys(&mut self) -> Result<Vec<PostKey>, SnapshotError> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.key()).collect()
    }
}

fn reason_code(r: Option<ExclusionReason>) -> u8 {
    match r {
        None => 0,
        Some(ExclusionReason::NonEnglish) => 1,
        Some(ExclusionReason::Specialized) => 2,
        Some(ExclusionReason::TooSmall) => 3,
    }
}

fn reason_from(code: u8) -> Result<Option<ExclusionReason>, SnapshotError> {
    Ok(match code {
        0 => None,
        1 => Some(ExclusionReason::NonEnglish),
        2 => Some(ExclusionReason::Specialized),
        3 => Some(ExclusionReason::TooSmall),
        c => return Err(SnapshotError::Corrupt(format!("bad exclusion code {c}"))),
    })
}

fn record(out: &mut impl Write, tag: u8, payload: &Enc) -> io::Result<()> {
    out.write_all(&[tag])?;
    out.write_all(&(payload.0.len() as u32).to_le_bytes())?;
    out.write_all(&payload.0)
}

pub fn write_snapshot(corpus: &Corpus, out: &mut impl Write) -> Result<(), SnapshotError> {
    out.write_all(SNAPSHOT_MAGIC)?;
    out.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    let mut count = 0u64;

    for f in corpus.forums() {
        let mut e = Enc::default();
        e.str(&f.forum_id);
        e.u64(f.question_count);
        e.u64(f.answer_count);
        e.u8(reason_code(f.excluded));
        record(out, TAG_FORUM, &e)?;
        count += 1;
    }
    for p in corpus.posts() {
        let mut e = Enc::default();
        e.str(&p.forum_id);
        e.u64(p.post_id);
        e.u8(match p.post_type {
            PostType::Question => 1,
            PostType::Answer => 2,
        });
        e.opt(p.parent_id, Enc::u64);
        e.opt(p.accepted_answer_id, Enc::u64);
        e.opt(p.title.as_deref(), Enc::str);
        e.str(&p.body);
        e.opt(p.owner_user_id, Enc::i64);
        e.i64(p.score);
        e.u64(p.favorite_count);
        e.opt(p.creation_date.as_deref(), Enc::str);
        record(out, TAG_POST, &e)?;
        count += 1;
    }
    for u in corpus.users() {
        let mut e = Enc::default();
        e.i64(u.account_id.0);
        e.u8(u.synthetic as u8);
        e.u32(u.local_ids.len() as u32);
        for (forum, local) in &u.local_ids {
            e.str(forum);
            e.i64(*local);
        }
        e.keys(&u.question_ids);
        e.keys(&u.answer_ids);
        record(out, TAG_USER, &e)?;
        count += 1;
    }
    for f in corpus.favorites() {
        let mut e = Enc::default();
        e.i64(f.account_id.0);
        e.str(&f.forum_id);
        e.u64(f.question_id);
        record(out, TAG_FAVORITE, &e)?;
        count += 1;
    }
    let mut e = Enc::default();
    e.u64(count);
    record(out, TAG_END, &e)?;
    out.flush()?;
    Ok(())
}

pub fn read_snapshot(input: &mut impl BufRead) -> Result<Corpus, SnapshotError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(|_| SnapshotError::BadMagic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != SNAPSHOT_VERSION {
        return Err(SnapshotError::UnsupportedVersion(version));
    }

    let mut forums = Vec::new();
    let mut posts = Vec::new();
    let mut users = Vec::new();
    let mut favorites = Vec::new();
    let mut count = 0u64;
    let mut payload = Vec::new();
    loop {
        let mut tag = [0u8; 1];
        input
            .read_exact(&mut tag)
            .map_err(|_| SnapshotError::Corrupt("missing trailer".into()))?;
        input.read_exact(&mut word)?;
        payload.resize(u32::from_le_bytes(word) as usize, 0);
        input
            .read_exact(&mut payload)
            .map_err(|_| SnapshotError::Corrupt("truncated record".into()))?;
        let mut d = Dec { buf: &payload };
        match tag[0] {
            TAG_FORUM => forums.push(Forum {
                forum_id: d.str()?,
                question_count: d.u64()?,
                answer_count: d.u64()?,
                excluded: reason_from(d.u8()?)?,
            }),
            TAG_POST => {
                let forum_id = d.str()?;
                let post_id = d.u64()?;
                let post_type = match d.u8()? {
                    1 => PostType::Question,
                    2 => PostType::Answer,
                    t => return Err(SnapshotError::Corrupt(format!("bad post type {t}"))),
                };
                posts.push(Post {
                    forum_id,
                    post_id,
                    post_type,
                    parent_id: d.opt(Dec::u64)?,
                    accepted_answer_id: d.opt(Dec::u64)?,
                    title: d.opt(Dec::str)?,
                    body: d.str()?,
                    owner_user_id: d.opt(Dec::i64)?,
                    score: d.i64()?,
                    favorite_count: d.u64()?,
                    creation_date: d.opt(Dec::str)?,
                });
            }
            TAG_USER => {
                let account_id = AccountId(d.i64()?);
                let synthetic = d.u8()? != 0;
                let n = d.u32()?;
                let mut local_ids = BTreeMap::new();
                for _ in 0..n {
                    let forum = d.str()?;
                    local_ids.insert(forum, d.i64()?);
                }
                users.push(NetworkUser {
                    account_id,
                    local_ids,
                    question_ids: d.keys()?,
                    answer_ids: d.keys()?,
                    synthetic,
                });
            }
            TAG_FAVORITE => favorites.push(FavoriteEdge {
                account_id: AccountId(d.i64()?),
                forum_id: d.str()?,
                question_id: d.u64()?,
            }),
            TAG_END => {
                let expected = d.u64()?;
                if expected != count {
                    return Err(SnapshotError::Corrupt(format!(
                        "trailer says {expected} records, read {count}"
                    )));
                }
                break;
            }
            t => return Err(SnapshotError::Corrupt(format!("unknown record tag {t}"))),
        }
        if !d.buf.is_empty() {
            return Err(SnapshotError::Corrupt(format!("trailing bytes in record {count}")));
        }
        count += 1;
    }
    Ok(Corpus::from_parts(forums, posts, users, favorites))
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum JsonRecord<'a> {
    Forum(&'a Forum),
    Post(&'a Post),
    User(&'a NetworkUser),
    Favorite(&'a FavoriteEdge),
}

/// JSON-lines debug dump of the same records, one per line.
pub fn export_jsonl(corpus: &Corpus, out: &mut impl Write) -> io::Result<()> {
    let records = corpus
        .forums()
        .iter()
        .map(JsonRecord::Forum)
        .chain(corpus.posts().iter().map(JsonRecord::Post))
        .chain(corpus.users().iter().map(JsonRecord::User))
        .chain(corpus.favorites().iter().map(JsonRecord::Favorite));
    for r in records {
        serde_json::to_writer(&mut *out, &r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
