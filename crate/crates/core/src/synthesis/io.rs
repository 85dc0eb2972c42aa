use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::{QrelEntry, SynthesisError, SyntheticQuery};
use crate::corpus::{AccountId, PostKey};

/// Tab-separated: query id, account id, forum, source question id,
/// duplicate flag (0/1), space-joined terms.
pub fn write_log(log: &[SyntheticQuery], out: &mut impl Write) -> std::io::Result<()> {
    for q in log {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            q.query_id,
            q.account_id,
            q.forum_id,
            q.source_question_id,
            u8::from(q.is_duplicate),
            q.terms.join(" ")
        )?;
    }
    Ok(())
}

/// Inverse of [`write_log`]. History positions are recovered from query id
/// order within each account.
pub fn read_log(input: impl BufRead) -> Result<Vec<SyntheticQuery>, SynthesisError> {
    let mut log = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| SynthesisError::Parse {
            line: n + 1,
            message,
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(err(format!("expected 6 tab-separated fields, got {}", f.len())));
        }
        let num = |s: &str, what: &str| s.parse::<u64>().map_err(|e| err(format!("{what} `{s}`: {e}")));
        let account: i64 = f[1]
            .parse()
            .map_err(|e| err(format!("account id `{}`: {e}", f[1])))?;
        let is_duplicate = match f[4] {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("duplicate flag `{other}`"))),
        };
        log.push(SyntheticQuery {
            query_id: num(f[0], "query id")?,
            account_id: AccountId(account),
            forum_id: f[2].to_string(),
            source_question_id: num(f[3], "question id")?,
            terms: f[5].split_whitespace().map(str::to_string).collect(),
            is_duplicate,
            timestamp_ord: 0,
        });
    }
    let mut order: Vec<usize> = (0..log.len()).collect();
    order.sort_by_key(|&i| (log[i].account_id, log[i].query_id));
    let mut pos: HashMap<AccountId, u64> = HashMap::new();
    for i in order {
        let p = pos.entry(log[i].account_id).or_default();
        log[i].timestamp_ord = *p;
        *p += 1;
    }
    Ok(log)
}

/// TREC qrels: `query_id 0 doc_id grade`.
pub fn write_qrels(qrels: &[QrelEntry], out: &mut impl Write) -> std::io::Result<()> {
    for r in qrels {
        writeln!(out, "{} 0 {} {}", r.query_id, r.doc_id, r.grade)?;
    }
    Ok(())
}

pub fn read_qrels(input: impl BufRead) -> Result<Vec<QrelEntry>, SynthesisError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let err = |message: String| SynthesisError::Parse {
            line: n + 1,
            message,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let [qid, _, doc, grade] = f[..] else {
            return Err(err(format!("expected 4 fields, got {}", f.len())));
        };
        out.push(QrelEntry {
            query_id: qid.parse().map_err(|e| err(format!("query id `{qid}`: {e}")))?,
            doc_id: doc.parse::<PostKey>().map_err(err)?,
            grade: grade.parse().map_err(|e| err(format!("grade `{grade}`: {e}")))?,
        });
    }
    Ok(out)
}
