//! Streaming readers for the dump's row-per-element XML files.
//!
//! Each file is a single root element (`posts`, `users`, `votes`) holding
//! `<row .../>` elements whose data lives entirely in attributes. Readers
//! reuse one event buffer, so memory stays bounded by the largest row.

use std::io::{self, BufRead, Read};

use quick_xml::events::{BytesStart, Event};
use quick_xml::{Reader, XmlVersion};

use super::{FavoriteRow, IngestError, Post, PostType, UserRow};

const FAVORITE_VOTE: &str = "5";

/// `BufRead` adaptor that counts newlines in consumed bytes.
struct LineCounter<R> {
    inner: R,
    lines: u64,
}

impl<R: Read> Read for LineCounter<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.lines += buf[..n].iter().filter(|&&b| b == b'\n').count() as u64;
        Ok(n)
    }
}

impl<R: BufRead> BufRead for LineCounter<R> {
    fn fill_buf(&mut self) -> io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        if let Ok(buf) = self.inner.fill_buf() {
            let n = amt.min(buf.len());
            self.lines += buf[..n].iter().filter(|&&b| b == b'\n').count() as u64;
        }
        self.inner.consume(amt);
    }
}

/// Pulls `<row>` elements out of one dump file.
struct RowStream<R: BufRead> {
    reader: Reader<LineCounter<R>>,
    buf: Vec<u8>,
    root: &'static str,
    seen_root: bool,
    done: bool,
}

impl<R: BufRead> RowStream<R> {
    fn new(input: R, root: &'static str) -> Self {
        RowStream {
            reader: Reader::from_reader(LineCounter {
                inner: input,
                lines: 0,
            }),
            buf: Vec::with_capacity(4096),
            root,
            seen_root: false,
            done: false,
        }
    }

    fn line(&self) -> u64 {
        self.reader.get_ref().lines + 1
    }

    fn malformed(&self, message: impl Into<String>) -> IngestError {
        IngestError::MalformedXml {
            line: self.line(),
            message: message.into(),
        }
    }

    /// Next row's attributes as (name, value) pairs handed to `visit`.
    fn next_row<T>(
        &mut self,
        mut visit: impl FnMut(&str, String) -> Result<(), String>,
        finish: impl FnOnce() -> Result<T, String>,
    ) -> Option<Result<T, IngestError>> {
        if self.done {
            return None;
        }
        loop {
            self.buf.clear();
            let event = match self.reader.read_event_into(&mut self.buf) {
                Ok(e) => e,
                Err(e) => {
                    self.done = true;
                    return Some(Err(self.malformed(e.to_string())));
                }
            };
            match event {
                Event::Start(e) | Event::Empty(e) if e.name().as_ref() == "row" => {
                    if !self.seen_root {
                        self.done = true;
                        return Some(Err(self.malformed("row outside root element")));
                    }
                    let row = read_attrs(&e, &mut visit).and_then(|()| finish());
                    return Some(match row {
                        Ok(v) => Ok(v),
                        Err(msg) => {
                            self.done = true;
                            Err(self.malformed(msg))
                        }
                    });
                }
                Event::Start(e) if !self.seen_root => {
                    if e.name().as_ref() != self.root {
                        self.done = true;
                        let got = e.name().as_ref().to_string();
                        return Some(Err(
                            self.malformed(format!("expected root <{}>, found <{got}>", self.root))
                        ));
                    }
                    self.seen_root = true;
                }
                Event::Empty(e) if !self.seen_root && e.name().as_ref() == self.root => {
                    self.seen_root = true;
                }
                Event::Eof => {
                    self.done = true;
                    if !self.seen_root {
                        return Some(Err(self.malformed(format!("missing root <{}>", self.root))));
                    }
                    return None;
                }
                _ => {}
            }
        }
    }
}

fn read_attrs(
    e: &BytesStart<'_>,
    visit: &mut impl FnMut(&str, String) -> Result<(), String>,
) -> Result<(), String> {
    for attr in e.attributes() {
        let attr = attr.map_err(|err| err.to_string())?;
        let key: &str = attr.key.as_ref();
        let value = attr
            .normalized_value(XmlVersion::Implicit1_0)
            .map_err(|err| err.to_string())?;
        visit(key, value.into_owned())?;
    }
    Ok(())
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("attribute {key}=\"{value}\" is not a valid number"))
}

#[derive(Default)]
struct PostFields {
    id: Option<u64>,
    post_type: Option<u8>,
    parent: Option<u64>,
    accepted: Option<u64>,
    title: Option<String>,
    body: Option<String>,
    owner: Option<i64>,
    score: i64,
    favorites: u64,
    created: Option<String>,
}

/// Streaming iterator over the posts of one forum.
///
/// Rows whose `PostTypeId` is neither 1 (question) nor 2 (answer) are
/// skipped and counted in [`PostsReader::skipped`].
pub struct PostsReader<R: BufRead> {
    rows: RowStream<R>,
    forum_id: String,
    skipped: u64,
}

impl<R: BufRead> PostsReader<R> {
    pub fn new(input: R, forum_id: &str) -> Self {
        PostsReader {
            rows: RowStream::new(input, "posts"),
            forum_id: forum_id.to_string(),
            skipped: 0,
        }
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }
}

impl<R: BufRead> Iterator for PostsReader<R> {
    type Item = Result<Post, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let mut f = PostFields::default();
            let row = self.rows.next_row(
                |key, value| {
                    match key {
                        "Id" => f.id = Some(num(key, &value)?),
                        "PostTypeId" => f.post_type = Some(num(key, &value)?),
                        "ParentId" => f.parent = Some(num(key, &value)?),
                        "AcceptedAnswerId" => f.accepted = Some(num(key, &value)?),
                        "Title" => f.title = Some(value),
                        "Body" => f.body = Some(value),
                        "OwnerUserId" => f.owner = Some(num(key, &value)?),
                        "Score" => f.score = num(key, &value)?,
                        "FavoriteCount" => f.favorites = num(key, &value)?,
                        "CreationDate" => f.created = Some(value),
                        _ => {}
                    }
                    Ok(())
                },
                || Ok(()),
            )?;
            if let Err(e) = row {
                return Some(Err(e));
            }
            let Some(id) = f.id else {
                return Some(Err(self.rows.malformed("row without Id")));
            };
            let post_type = match f.post_type {
                Some(1) => PostType::Question,
                Some(2) => PostType::Answer,
                Some(_) => {
                    self.skipped += 1;
                    continue;
                }
                None => return Some(Err(self.rows.malformed(format!("post {id} without PostTypeId")))),
            };
            let (parent_id, accepted_answer_id, title) = match post_type {
                PostType::Question => (None, f.accepted, f.title),
                PostType::Answer => (f.parent, None, None),
            };
            return Some(Ok(Post {
                post_id: id,
                forum_id: self.forum_id.clone(),
                post_type,
                parent_id,
                accepted_answer_id,
                title,
                body: f.body.unwrap_or_default(),
                owner_user_id: f.owner,
                score: f.score,
                favorite_count: f.favorites,
                creation_date: f.created,
            }));
        }
    }
}

/// Start streaming the posts of one forum.
pub fn parse_posts<R: BufRead>(input: R, forum_id: &str) -> PostsReader<R> {
    PostsReader::new(input, forum_id)
}

/// Read all `Users.xml` rows of one forum.
pub fn parse_users<R: BufRead>(input: R, forum_id: &str) -> Result<Vec<UserRow>, IngestError> {
    let mut rows = RowStream::new(input, "users");
    let mut out = Vec::new();
    loop {
        let mut id = None;
        let mut account = None;
        let row = rows.next_row(
            |key, value| {
                match key {
                    "Id" => id = Some(num(key, &value)?),
                    "AccountId" => account = Some(num(key, &value)?),
                    _ => {}
                }
                Ok(())
            },
            || Ok(()),
        );
        match row {
            None => return Ok(out),
            Some(Err(e)) => return Err(e),
            Some(Ok(())) => {
                let local_id = id.ok_or_else(|| rows.malformed("user row without Id"))?;
                out.push(UserRow {
                    forum_id: forum_id.to_string(),
                    local_id,
                    account_id: account,
                });
            }
        }
    }
}

/// Read the favorite votes (`VoteTypeId="5"`) of one forum's `Votes.xml`.
pub fn parse_favorites<R: BufRead>(
    input: R,
    forum_id: &str,
) -> Result<Vec<FavoriteRow>, IngestError> {
    let mut rows = RowStream::new(input, "votes");
    let mut out = Vec::new();
    loop {
        let mut post = None;
        let mut kind = None;
        let mut user = None;
        let row = rows.next_row(
            |key, value| {
                match key {
                    "PostId" => post = Some(num(key, &value)?),
                    "VoteTypeId" => kind = Some(value),
                    "UserId" => user = Some(num(key, &value)?),
                    _ => {}
                }
                Ok(())
            },
            || Ok(()),
        );
        match row {
            None => return Ok(out),
            Some(Err(e)) => return Err(e),
            Some(Ok(())) => {
                if kind.as_deref() != Some(FAVORITE_VOTE) {
                    continue;
                }
                let post_id = post.ok_or_else(|| rows.malformed("vote row without PostId"))?;
                out.push(FavoriteRow {
                    forum_id: forum_id.to_string(),
                    post_id,
                    user_id: user,
                });
            }
        }
    }
}
