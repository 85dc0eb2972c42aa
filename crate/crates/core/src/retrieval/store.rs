//! Index file layout (`index.bin`), all integers LEB128 varints unless noted:
//!
//! ```text
//! "CQAI"  u32-le version  u8 variant  f64-le mu
//! n_forums  { len bytes }*            forum names, ascending
//! n_docs    { forum_index  post  doc_len }*
//! n_terms   { len bytes  ctf  df  { doc_delta  count }* }*
//! "END\n"
//! ```
//!
//! Document numbers in postings are gaps from the previous posting (the first
//! is absolute).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{IndexError, InvertedIndex, Variant};
use crate::corpus::PostKey;

pub const INDEX_FILE: &str = "index.bin";
pub const INDEX_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"CQAI";
const TRAILER: &[u8; 4] = b"END\n";

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_varint(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn corrupt(&self, what: &str) -> IndexError {
        IndexError::Corrupt(format!("{what} at byte {}", self.pos))
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| self.corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn varint(&mut self) -> Result<u64, IndexError> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.bytes(1)?[0];
            v |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(self.corrupt("varint overflow"))
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        u32::try_from(self.varint()?).map_err(|_| self.corrupt("value exceeds u32"))
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let n = self.varint()? as usize;
        let b = self.bytes(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.corrupt("invalid utf-8"))
    }
}

pub fn encode(index: &InvertedIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&INDEX_FORMAT_VERSION.to_le_bytes());
    out.push(match index.variant {
        Variant::Raw => 0,
        Variant::Q2a => 1,
    });
    out.extend_from_slice(&index.mu.to_le_bytes());

    let mut forums: Vec<&str> = index.docs.iter().map(|d| d.forum.as_str()).collect();
    forums.dedup();
    put_varint(&mut out, forums.len() as u64);
    for f in &forums {
        put_str(&mut out, f);
    }
    put_varint(&mut out, index.docs.len() as u64);
    let mut fi = 0;
    for (d, &len) in index.docs.iter().zip(&index.doc_len) {
        while forums[fi] != d.forum {
            fi += 1;
        }
        put_varint(&mut out, fi as u64);
        put_varint(&mut out, d.post);
        put_varint(&mut out, u64::from(len));
    }
    put_varint(&mut out, index.vocab.len() as u64);
    for ((term, &ctf), list) in index.vocab.iter().zip(&index.collection_tf).zip(&index.postings) {
        put_str(&mut out, term);
        put_varint(&mut out, ctf);
        put_varint(&mut out, list.len() as u64);
        let mut prev = 0u32;
        for &(doc, count) in list {
            put_varint(&mut out, u64::from(doc - prev));
            put_varint(&mut out, u64::from(count));
            prev = doc;
        }
    }
    out.extend_from_slice(TRAILER);
    out
}

pub fn decode(buf: &[u8]) -> Result<InvertedIndex, IndexError> {
    let mut c = Cursor { buf, pos: 0 };
    if buf.len() < 4 || &buf[..4] != MAGIC {
        return Err(IndexError::BadMagic);
    }
    c.pos = 4;
    let version = u32::from_le_bytes(c.bytes(4)?.try_into().expect("4 bytes"));
    if version != INDEX_FORMAT_VERSION {
        return Err(IndexError::UnsupportedVersion(version));
    }
    let variant = match c.bytes(1)?[0] {
        0 => Variant::Raw,
        1 => Variant::Q2a,
        _ => return Err(c.corrupt("unknown variant")),
    };
    let mu = f64::from_le_bytes(c.bytes(8)?.try_into().expect("8 bytes"));

    let n_forums = c.varint()? as usize;
    let forums = (0..n_forums).map(|_| c.string()).collect::<Result<Vec<_>, _>>()?;
    let n_docs = c.varint()? as usize;
    let mut docs = Vec::with_capacity(n_docs.min(buf.len()));
    let mut doc_len = Vec::with_capacity(n_docs.min(buf.len()));
    for _ in 0..n_docs {
        let fi = c.varint()? as usize;
        let forum = forums.get(fi).ok_or_else(|| c.corrupt("forum index"))?;
        let post = c.varint()?;
        docs.push(PostKey::new(forum.clone(), post));
        doc_len.push(c.u32()?);
    }
    if docs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(c.corrupt("document ids not ascending"));
    }

    let n_terms = c.varint()? as usize;
    let mut vocab = Vec::with_capacity(n_terms.min(buf.len()));
    let mut collection_tf = Vec::with_capacity(n_terms.min(buf.len()));
    let mut postings = Vec::with_capacity(n_terms.min(buf.len()));
    for _ in 0..n_terms {
        vocab.push(c.string()?);
        collection_tf.push(c.varint()?);
        let df = c.varint()? as usize;
        let mut list = Vec::with_capacity(df.min(buf.len()));
        let mut doc = 0u32;
        for i in 0..df {
            let gap = c.u32()?;
            if i > 0 && gap == 0 {
                return Err(c.corrupt("repeated posting"));
            }
            doc = doc.checked_add(gap).ok_or_else(|| c.corrupt("doc overflow"))?;
            if doc as usize >= docs.len() {
                return Err(c.corrupt("posting past last document"));
            }
            list.push((doc, c.u32()?));
        }
        postings.push(list);
    }
    if c.bytes(4)? != TRAILER {
        return Err(c.corrupt("missing trailer"));
    }
    let collection_len = doc_len.iter().map(|&l| u64::from(l)).sum();
    Ok(InvertedIndex::from_parts(
        variant,
        mu,
        docs,
        doc_len,
        collection_len,
        vocab,
        collection_tf,
        postings,
    ))
}

/// Write `dir/index.bin`, creating `dir` if needed.
pub fn save_index(index: &InvertedIndex, dir: &Path) -> Result<(), IndexError> {
    std::fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join(INDEX_FILE))?);
    w.write_all(&encode(index))?;
    w.flush()?;
    Ok(())
}

pub fn load_index(dir: &Path) -> Result<InvertedIndex, IndexError> {
    let mut buf = Vec::new();
    BufReader::new(File::open(dir.join(INDEX_FILE))?).read_to_end(&mut buf)?;
    decode(&buf)
}
