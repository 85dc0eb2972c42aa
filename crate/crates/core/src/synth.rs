//! Synthetic fixtures: forum dumps in the Stack Exchange XML layout and
//! question-query pair datasets with controlled annotator behaviour.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use html_escape::encode_double_quoted_attribute as attr;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ranker::QuestionQueryPair;
use crate::seed;
use crate::text::Analyzer;

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "nu", "ra", "si", "tu", "vo", "bi", "fa", "gu", "ho", "ja", "ko", "pu", "zo",
];
const FILLER: [&str; 16] = [
    "the", "is", "how", "i", "to", "a", "it", "in", "my", "with", "and", "of", "this", "what", "can", "for",
];

/// Distinct made-up words of two or three syllables, none a stopword.
pub fn vocabulary(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let analyzer = Analyzer::default();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let k = rng.gen_range(2..=3);
        let w: String = (0..k).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
        let stem = crate::text::porter::stem(&w);
        if !analyzer.is_stopword(&w) && seen.insert(stem) {
            out.push(w);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpSpec {
    pub forums: usize,
    pub questions_per_forum: usize,
    /// Users who ask and favorite a large share of questions.
    pub heavy_users: usize,
    pub light_users: usize,
    /// Probability that a question is asked by a heavy user.
    pub heavy_share: f64,
    /// Probability that a heavy user favorites a given question.
    pub heavy_favorite_rate: f64,
    /// Answers per question, accepted one included.
    pub min_answers: usize,
    pub max_answers: usize,
    /// Probability that a question has no owner.
    pub orphan_rate: f64,
    pub seed: u64,
}

impl Default for DumpSpec {
    fn default() -> Self {
        DumpSpec {
            forums: 3,
            questions_per_forum: 100,
            heavy_users: 3,
            light_users: 30,
            heavy_share: 0.6,
            heavy_favorite_rate: 0.3,
            min_answers: 6,
            max_answers: 8,
            orphan_rate: 0.02,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpSummary {
    pub forums: Vec<String>,
    pub questions: usize,
    pub answers: usize,
    pub favorites: usize,
}

fn date(n: usize, forum: usize) -> String {
    format!(
        "{}-{:02}-{:02}T{:02}:{:02}:00.000",
        2010 + n / (12 * 28 * 24),
        1 + (n / (28 * 24)) % 12,
        1 + (n / 24) % 28,
        n % 24,
        forum % 60
    )
}

fn sentence(words: &[&str], rng: &mut ChaCha8Rng) -> String {
    let mut s = String::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        if i > 0 && rng.gen_bool(0.25) {
            s.push_str(FILLER.choose(rng).expect("non-empty"));
            s.push(' ');
        }
        s.push_str(w);
    }
    s
}

/// Mix `n` words drawn from `key` (probability `p_key`), `topic` and `general`.
fn words<'a>(
    n: usize,
    key: &[&'a str],
    p_key: f64,
    topic: &'a [String],
    general: &'a [String],
    rng: &mut ChaCha8Rng,
) -> Vec<&'a str> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            if !key.is_empty() && u < p_key {
                *key.choose(rng).expect("non-empty")
            } else if u < p_key + (1.0 - p_key) * 0.7 {
                topic.choose(rng).expect("non-empty").as_str()
            } else {
                general.choose(rng).expect("non-empty").as_str()
            }
        })
        .collect()
}

fn html_paragraphs(text: &str, rng: &mut ChaCha8Rng) -> String {
    let parts: Vec<&str> = text.split(". ").collect();
    let mut out = String::new();
    for p in parts {
        if rng.gen_bool(0.1) {
            out.push_str(&format!("<p>{p} &amp; <code>{p}</code></p>"));
        } else {
            out.push_str(&format!("<p>{p}.</p>"));
        }
    }
    out
}

/// Write a multi-forum dump (one directory per forum with Posts.xml,
/// Users.xml and Votes.xml) under `dir`.
///
/// Each forum has its own topical vocabulary. Questions revolve around a few
/// key words; the accepted answer repeats some of them, other answers fewer.
/// Heavy users ask and favorite enough questions to pass user retention.
pub fn write_dump(dir: &Path, spec: &DumpSpec) -> std::io::Result<DumpSummary> {
    let mut rng = seed::rng(spec.seed, "synth-dump", &[]);
    let general = vocabulary(40, &mut rng);
    let n_users = spec.heavy_users + spec.light_users;
    let mut summary = DumpSummary::default();

    for f in 0..spec.forums {
        let forum = format!("topic{f}.example");
        let fdir = dir.join(&forum);
        std::fs::create_dir_all(&fdir)?;
        let mut rng = seed::rng(spec.seed, "synth-forum", &[f as u64]);
        let topic: Vec<String> = vocabulary(80, &mut rng)
            .into_iter()
            .filter(|w| !general.contains(w))
            .collect();
        let local = |u: usize| (u + 1 + 1000 * f) as i64;

        let mut users = BufWriter::new(File::create(fdir.join("Users.xml"))?);
        writeln!(users, "<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<users>")?;
        for u in 0..n_users {
            writeln!(
                users,
                "  <row Id=\"{}\" DisplayName=\"user{u}\" AccountId=\"{}\" />",
                local(u),
                5000 + u
            )?;
        }
        writeln!(users, "</users>")?;
        users.flush()?;

        let mut posts = BufWriter::new(File::create(fdir.join("Posts.xml"))?);
        let mut votes = BufWriter::new(File::create(fdir.join("Votes.xml"))?);
        writeln!(posts, "<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<posts>")?;
        writeln!(votes, "<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<votes>")?;
        writeln!(
            posts,
            "  <row Id=\"1\" PostTypeId=\"5\" Body=\"&lt;p&gt;tag wiki&lt;/p&gt;\" CreationDate=\"{}\" />",
            date(0, f)
        )?;
        let mut next_id = 2u64;
        let mut vote_id = 1u64;
        let mut clock = 1usize;
        for _ in 0..spec.questions_per_forum {
            let qid = next_id;
            next_id += 1;
            let key: Vec<&str> = topic.choose_multiple(&mut rng, 3).map(String::as_str).collect();
            let mut title_words = key.clone();
            title_words.extend(words(2, &[], 0.0, &topic, &general, &mut rng));
            title_words.shuffle(&mut rng);
            let title = format!("How {}?", sentence(&title_words, &mut rng));
            let n_body = rng.gen_range(25..=45);
            let body_words = words(n_body, &key, 0.3, &topic, &general, &mut rng);
            let body_text = body_words
                .chunks(9)
                .map(|c| sentence(c, &mut rng))
                .collect::<Vec<_>>()
                .join(". ");
            let body = html_paragraphs(&body_text, &mut rng);

            let owner = if rng.gen_bool(spec.orphan_rate) {
                None
            } else if spec.heavy_users > 0 && rng.gen_bool(spec.heavy_share) {
                Some(rng.gen_range(0..spec.heavy_users))
            } else {
                Some(spec.heavy_users + rng.gen_range(0..spec.light_users.max(1)))
            };
            let n_answers = rng.gen_range(spec.min_answers..=spec.max_answers);
            let accepted_index = rng.gen_range(0..n_answers);
            let answer_ids: Vec<u64> = (0..n_answers as u64).map(|i| next_id + i).collect();
            next_id += n_answers as u64;

            let owner_attr = owner.map_or(String::new(), |u| format!(" OwnerUserId=\"{}\"", local(u)));
            writeln!(
                posts,
                "  <row Id=\"{qid}\" PostTypeId=\"1\" AcceptedAnswerId=\"{}\" CreationDate=\"{}\" Score=\"{}\" Body=\"{}\"{owner_attr} Title=\"{}\" AnswerCount=\"{n_answers}\" />",
                answer_ids[accepted_index],
                date(clock, f),
                rng.gen_range(-2..30),
                attr(&body),
                attr(&title),
            )?;
            clock += 1;
            summary.questions += 1;

            for (i, &aid) in answer_ids.iter().enumerate() {
                let accepted = i == accepted_index;
                let p_key = if accepted { 0.35 } else { 0.06 };
                let n = rng.gen_range(15..=30);
                let text = sentence(&words(n, &key, p_key, &topic, &general, &mut rng), &mut rng);
                let body = html_paragraphs(&text, &mut rng);
                let owner = rng.gen_range(0..n_users);
                writeln!(
                    posts,
                    "  <row Id=\"{aid}\" PostTypeId=\"2\" ParentId=\"{qid}\" CreationDate=\"{}\" Score=\"{}\" Body=\"{}\" OwnerUserId=\"{}\" />",
                    date(clock, f),
                    rng.gen_range(-1..20),
                    attr(&body),
                    local(owner),
                )?;
                clock += 1;
                summary.answers += 1;
            }

            for u in 0..n_users {
                let rate = if u < spec.heavy_users { spec.heavy_favorite_rate } else { 0.01 };
                if rng.gen_bool(rate) {
                    writeln!(
                        votes,
                        "  <row Id=\"{vote_id}\" PostId=\"{qid}\" VoteTypeId=\"5\" UserId=\"{}\" CreationDate=\"{}\" />",
                        local(u),
                        date(clock, f)
                    )?;
                    vote_id += 1;
                    summary.favorites += 1;
                }
                if rng.gen_bool(0.05) {
                    writeln!(
                        votes,
                        "  <row Id=\"{vote_id}\" PostId=\"{qid}\" VoteTypeId=\"2\" CreationDate=\"{}\" />",
                        date(clock, f)
                    )?;
                    vote_id += 1;
                }
            }
        }
        writeln!(posts, "</posts>")?;
        writeln!(votes, "</votes>")?;
        posts.flush()?;
        votes.flush()?;
        summary.forums.push(forum);
    }
    Ok(summary)
}

/// Stream a Posts.xml with `rows` rows (questions each followed by four
/// answers) to `out`.
pub fn write_large_posts(out: &mut impl Write, rows: usize, seed_value: u64) -> std::io::Result<()> {
    let mut rng = seed::rng(seed_value, "synth-large", &[]);
    let vocab = vocabulary(200, &mut rng);
    writeln!(out, "<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<posts>")?;
    let mut parent = 1;
    for id in 1..=rows as u64 {
        let n = rng.gen_range(20..60);
        let text: Vec<&str> = (0..n).map(|_| vocab.choose(&mut rng).expect("non-empty").as_str()).collect();
        let body = attr(&format!("<p>{}</p>", text.join(" "))).into_owned();
        if id % 5 == 1 {
            parent = id;
            writeln!(
                out,
                "  <row Id=\"{id}\" PostTypeId=\"1\" AcceptedAnswerId=\"{}\" Title=\"{} {}\" Body=\"{body}\" OwnerUserId=\"{}\" />",
                id + 1,
                text[0],
                text[1],
                id % 997
            )?;
        } else {
            writeln!(
                out,
                "  <row Id=\"{id}\" PostTypeId=\"2\" ParentId=\"{parent}\" Body=\"{body}\" OwnerUserId=\"{}\" />",
                id % 991
            )?;
        }
    }
    writeln!(out, "</posts>")
}

/// Questions of `title_words` and `body_words` distinct words, each repeated
/// 1 to 4 times, for annotators of two kinds: even-numbered annotators query
/// the title words that occur at least twice, odd-numbered ones the body
/// words that occur at least twice.
pub fn divergent_pairs(
    annotators: usize,
    pairs_per_annotator: usize,
    seed_value: u64,
) -> Vec<QuestionQueryPair> {
    let analyzer = Analyzer::default();
    let mut rng = seed::rng(seed_value, "synth-divergent", &[]);
    let vocab = vocabulary(600, &mut rng);
    let mut out = Vec::new();
    for a in 0..annotators {
        let wants_title = a % 2 == 0;
        for i in 0..pairs_per_annotator {
            let picked: Vec<&String> = vocab.choose_multiple(&mut rng, 12).collect();
            let (title_w, body_w) = picked.split_at(4);
            let mut tf = |n: usize| -> Vec<usize> {
                let mut v: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=4)).collect();
                v[0] = rng.gen_range(2..=4);
                v.shuffle(&mut rng);
                v
            };
            let title_tf = tf(title_w.len());
            let body_tf = tf(body_w.len());
            let mut title_tokens: Vec<&str> = Vec::new();
            for (w, &n) in title_w.iter().zip(&title_tf) {
                title_tokens.extend(std::iter::repeat_n(w.as_str(), n));
            }
            title_tokens.shuffle(&mut rng);
            let mut body_tokens: Vec<&str> = Vec::new();
            for (w, &n) in body_w.iter().zip(&body_tf) {
                body_tokens.extend(std::iter::repeat_n(w.as_str(), n));
            }
            body_tokens.shuffle(&mut rng);
            let query: Vec<&str> = if wants_title {
                title_w.iter().zip(&title_tf).filter(|(_, &n)| n >= 2).map(|(w, _)| w.as_str()).collect()
            } else {
                body_w.iter().zip(&body_tf).filter(|(_, &n)| n >= 2).map(|(w, _)| w.as_str()).collect()
            };
            out.push(QuestionQueryPair::new(
                &analyzer,
                &format!("a{a}-{i}"),
                &format!("annotator{a:03}"),
                "fixture",
                &title_tokens.join(" "),
                &body_tokens.join(" "),
                &query.join(" "),
            ));
        }
    }
    out
}

/// Questions whose annotators pick words with probability rising with their
/// frequency in the question, plus the occasional own word.
pub fn human_like_pairs(
    questions: usize,
    annotators_per_question: usize,
    seed_value: u64,
) -> Vec<QuestionQueryPair> {
    let analyzer = Analyzer::default();
    let mut rng = seed::rng(seed_value, "synth-human", &[]);
    let vocab = vocabulary(800, &mut rng);
    let mut out = Vec::new();
    for q in 0..questions {
        let n_distinct = rng.gen_range(8..20);
        let distinct: Vec<&String> = vocab.choose_multiple(&mut rng, n_distinct).collect();
        let mut tokens: Vec<&str> = Vec::new();
        for (i, w) in distinct.iter().enumerate() {
            let n = if i < 3 { rng.gen_range(2..=5) } else { rng.gen_range(1..=2) };
            tokens.extend(std::iter::repeat_n(w.as_str(), n));
            if rng.gen_bool(0.5) {
                tokens.push(FILLER.choose(&mut rng).expect("non-empty"));
            }
        }
        tokens.shuffle(&mut rng);
        let split = tokens.len() / 4;
        let title = tokens[..split].join(" ");
        let body = tokens[split..].join(" ");
        for a in 0..annotators_per_question {
            let mut query: Vec<&str> = distinct
                .iter()
                .filter(|w| {
                    let tf = tokens.iter().filter(|t| *t == &w.as_str()).count();
                    rng.gen_bool((0.15 * tf as f64).min(0.9))
                })
                .map(|w| w.as_str())
                .collect();
            if query.is_empty() || rng.gen_bool(0.15) {
                query.push(vocab.choose(&mut rng).expect("non-empty"));
            }
            out.push(QuestionQueryPair::new(
                &analyzer,
                &format!("q{q}-{a}"),
                &format!("annotator{:03}", (q + a) % 17),
                "fixture",
                &title,
                &body,
                &query.join(" "),
            ));
        }
    }
    out
}

/// Write pairs in the tab-separated dataset format.
pub fn write_pairs(pairs: &[QuestionQueryPair], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "pair_id\tannotator_id\tforum_id\ttitle\tbody\tquery")?;
    for p in pairs {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            p.pair_id,
            p.annotator_id,
            p.forum_id,
            p.title,
            p.body,
            p.query.surface_text()
        )?;
    }
    Ok(())
}
