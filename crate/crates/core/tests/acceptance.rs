//! Acceptance checks. Runs as a plain binary (no test harness) so that
//! criteria execute one at a time and the allocation tracker only sees the
//! parse it is measuring. Prints one PASS/FAIL line per criterion.

use std::alloc::{GlobalAlloc, Layout, System};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use cqalog::analysis::{agreement_report, jaccard, pair_stats};
use cqalog::corpus::{filter_questions, ingest_dump, parse_posts, AccountId, Corpus, ExclusionList, FilterPolicy, PostKey};
use cqalog::eval::{evaluate, user_map, EvalReport};
use cqalog::pipeline::{run_pipeline, PipelineConfig, MANIFEST_FILE};
use cqalog::ranker::{compare_global_personalized, pair_term_stats, read_pairs, Objective, Problem, TrainConfig};
use cqalog::retrieval::{search_log, InvertedIndex, RunEntry, Variant};
use cqalog::seed;
use cqalog::synth::{self, DumpSpec};
use cqalog::synthesis::{
    corpus_term_stats, derive_log, derive_qrels, extract_query, top_terms, DeriveConfig, LengthDistribution,
    QrelEntry, QuestionDoc, Strategy, SyntheticQuery,
};
use cqalog::text::porter::stem;
use cqalog::text::{Analyzer, IdfVariant, TermStats, TokenizedText};

struct Tracking;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

fn grew(n: usize) {
    let now = CURRENT.fetch_add(n, Ordering::Relaxed) + n;
    PEAK.fetch_max(now, Ordering::Relaxed);
}

unsafe impl GlobalAlloc for Tracking {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            grew(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            grew(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            if new_size > layout.size() {
                grew(new_size - layout.size());
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

#[global_allocator]
static ALLOCATOR: Tracking = Tracking;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

// 1 ------------------------------------------------------------------------

fn dirichlet_oracle(stems: &[Vec<String>], query: &[String], d: usize, mu: f64) -> f64 {
    let total: usize = stems.iter().map(Vec::len).sum();
    let mut score = 0.0;
    for t in query {
        let ctf = stems.iter().flatten().filter(|s| *s == t).count();
        if ctf == 0 {
            continue;
        }
        let c = stems[d].iter().filter(|s| *s == t).count();
        let p = ctf as f64 / total as f64;
        score += ((c as f64 + mu * p) / (stems[d].len() as f64 + mu)).ln();
    }
    score
}

fn c1_dirichlet() -> Check {
    let start = Instant::now();
    let analyzer = Analyzer::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let words = synth::vocabulary(24, &mut rng);
    let n_docs = 50;
    let texts: Vec<String> = (0..n_docs)
        .map(|_| {
            let len = rng.gen_range(0..40);
            (0..len)
                .map(|_| {
                    let u: f64 = rng.gen();
                    words[(u * u * 20.0) as usize].as_str()
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let docs: Vec<(PostKey, TokenizedText)> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| (PostKey::new("f", i as u64), analyzer.tokenize(t)))
        .collect();
    let stems: Vec<Vec<String>> = texts
        .iter()
        .map(|t| t.split_whitespace().map(stem).collect())
        .collect();
    let mus = [1.0, 10.0, 2500.0];
    let indexes: Vec<InvertedIndex> = mus
        .iter()
        .map(|&mu| InvertedIndex::build(docs.clone(), Variant::Raw, mu).unwrap())
        .collect();
    let mut worst = 0f64;
    for _ in 0..200 {
        let m = rng.gen_range(0..mus.len());
        let d = rng.gen_range(0..n_docs);
        let qlen = rng.gen_range(1..=8);
        let query: Vec<String> = (0..qlen).map(|_| stem(words.choose(&mut rng).unwrap())).collect();
        let got = indexes[m].score(&query, &PostKey::new("f", d as u64)).unwrap();
        let want = dirichlet_oracle(&stems, &query, d, mus[m]);
        worst = worst.max((got - want).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(worst <= 1e-9, "max abs error {worst:e} > 1e-9");
    ensure!(secs < 5.0, "took {secs:.2} s");
    Ok(format!("200 (query, doc) pairs, max |error| {worst:.1e}, {secs:.2} s"))
}

// 2 ------------------------------------------------------------------------

struct EvalFixture {
    run: Vec<RunEntry>,
    qrels: Vec<QrelEntry>,
    users: BTreeMap<u64, AccountId>,
}

fn doc(n: u64) -> PostKey {
    PostKey::new("f", n)
}

fn hand_built_eval() -> EvalFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut f = EvalFixture {
        run: Vec::new(),
        qrels: Vec::new(),
        users: BTreeMap::new(),
    };
    for q in 1..=20u64 {
        f.users.insert(q, AccountId(1 + (q % 4) as i64));
        let mut pool: Vec<u64> = (0..40).collect();
        pool.shuffle(&mut rng);
        let n_rel = rng.gen_range(1..=5);
        for (i, &d) in pool[..n_rel].iter().enumerate() {
            let grade = if i == 0 { 2 } else { 1 };
            f.qrels.push(QrelEntry {
                query_id: q,
                doc_id: doc(d),
                grade,
            });
        }
        f.qrels.push(QrelEntry {
            query_id: q,
            doc_id: doc(pool[n_rel]),
            grade: 0,
        });
        if q == 20 {
            continue;
        }
        let depth = rng.gen_range(5..30);
        let mut ranked = pool.clone();
        ranked.shuffle(&mut rng);
        if q == 7 {
            ranked.retain(|d| !pool[..n_rel].contains(d));
        }
        for (i, &d) in ranked[..depth].iter().enumerate() {
            f.run.push(RunEntry {
                query_id: q,
                doc_id: doc(d),
                rank: i + 1,
                score: -(i as f64),
                tag: "t".into(),
            });
        }
    }
    f
}

/// Per-query AP and RR computed directly from the run and qrels, averaged
/// per user, then over users.
fn scripted_eval(f: &EvalFixture) -> (f64, f64) {
    let mut per_user: BTreeMap<AccountId, Vec<(f64, f64)>> = BTreeMap::new();
    for (&q, &user) in &f.users {
        let relevant: Vec<&PostKey> = f
            .qrels
            .iter()
            .filter(|r| r.query_id == q && r.grade >= 1)
            .map(|r| &r.doc_id)
            .collect();
        if relevant.is_empty() {
            continue;
        }
        let gold = f.qrels.iter().find(|r| r.query_id == q && r.grade == 2).map(|r| &r.doc_id);
        let mut ranked: Vec<&RunEntry> = f.run.iter().filter(|r| r.query_id == q).collect();
        ranked.sort_by_key(|r| r.rank);
        let mut hits = 0.0;
        let mut sum = 0.0;
        let mut rr = 0.0;
        for (i, r) in ranked.iter().enumerate() {
            if relevant.contains(&&r.doc_id) {
                hits += 1.0;
                sum += hits / (i + 1) as f64;
            }
            if Some(&r.doc_id) == gold && rr == 0.0 {
                rr = 1.0 / (i + 1) as f64;
            }
        }
        per_user.entry(user).or_default().push((sum / relevant.len() as f64, rr));
    }
    let n = per_user.len() as f64;
    let map = per_user
        .values()
        .map(|v| v.iter().map(|x| x.0).sum::<f64>() / v.len() as f64)
        .sum::<f64>()
        / n;
    let mrr = per_user
        .values()
        .map(|v| v.iter().map(|x| x.1).sum::<f64>() / v.len() as f64)
        .sum::<f64>()
        / n;
    (map, mrr)
}

fn c2_eval() -> Check {
    let f = hand_built_eval();
    let report = evaluate(&f.run, &f.qrels, &f.users).map_err(|e| e.to_string())?;
    let (map, mrr) = scripted_eval(&f);
    ensure!(report.n_queries_evaluated == 20, "{} queries evaluated", report.n_queries_evaluated);
    ensure!(rel_err(report.map_score, map) < 1e-12, "MAP {} vs oracle {map}", report.map_score);
    ensure!(rel_err(report.mrr_score, mrr) < 1e-12, "MRR {} vs oracle {mrr}", report.mrr_score);

    let mut run = Vec::new();
    let mut qrels = Vec::new();
    let mut users = BTreeMap::new();
    for q in 1..=100u64 {
        users.insert(q, AccountId(if q == 1 { 1 } else { 2 }));
        qrels.push(QrelEntry {
            query_id: q,
            doc_id: doc(q),
            grade: 2,
        });
        run.push(RunEntry {
            query_id: q,
            doc_id: doc(if q == 1 { 1 } else { 1000 + q }),
            rank: 1,
            score: 0.0,
            tag: "t".into(),
        });
    }
    let macro_report = evaluate(&run, &qrels, &users).map_err(|e| e.to_string())?;
    ensure!(macro_report.map_score == 0.5, "macro MAP {}", macro_report.map_score);
    Ok(format!(
        "MAP {:.12} MRR {:.12} match the scripted evaluator; 1.0x1 / 0.0x99 users give MAP 0.5",
        report.map_score, report.mrr_score
    ))
}

// 3, 6 ---------------------------------------------------------------------

struct Collection {
    corpus: Corpus,
    log: Vec<SyntheticQuery>,
    qrels: Vec<QrelEntry>,
    raw: EvalReport,
    q2a: EvalReport,
    secs: f64,
}

fn build_collection() -> Result<Collection, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = DumpSpec {
        seed: 3,
        ..Default::default()
    };
    synth::write_dump(dir.path(), &spec).map_err(|e| e.to_string())?;
    let analyzer = Analyzer::default();
    let (corpus, _) = ingest_dump(dir.path(), &ExclusionList::default()).map_err(|e| e.to_string())?;
    let questions: Vec<PostKey> = filter_questions(&corpus, &FilterPolicy::default()).into_iter().collect();
    let stats = corpus_term_stats(&corpus, &analyzer);
    let cfg = DeriveConfig {
        seed: 5,
        ..Default::default()
    };
    let (log, _) =
        derive_log(&corpus, &questions, &stats, &analyzer, &cfg, Strategy::TfidfTop).map_err(|e| e.to_string())?;
    let qrels = derive_qrels(&corpus, &log, None).map_err(|e| e.to_string())?;
    let users = user_map(&log);
    let mut reports = Vec::new();
    for variant in [Variant::Raw, Variant::Q2a] {
        let docs = cqalog::retrieval::corpus_documents(&corpus, &analyzer, variant).map_err(|e| e.to_string())?;
        let index = InvertedIndex::build(docs, variant, cqalog::retrieval::DEFAULT_MU).map_err(|e| e.to_string())?;
        let (run, _) = search_log(&index, &log, cqalog::retrieval::DEFAULT_K, variant.name());
        reports.push(evaluate(&run, &qrels, &users).map_err(|e| e.to_string())?);
    }
    let q2a = reports.pop().expect("two reports");
    let raw = reports.pop().expect("two reports");
    Ok(Collection {
        corpus,
        log,
        qrels,
        raw,
        q2a,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn collection() -> Result<&'static Collection, String> {
    static C: OnceLock<Result<Collection, String>> = OnceLock::new();
    C.get_or_init(build_collection).as_ref().map_err(Clone::clone)
}

fn c3_q2a_beats_raw() -> Check {
    let c = collection()?;
    ensure!(!c.log.is_empty(), "empty log");
    ensure!(
        c.q2a.map_score >= c.raw.map_score,
        "q2a MAP {:.4} < raw MAP {:.4}",
        c.q2a.map_score,
        c.raw.map_score
    );
    ensure!(c.secs < 60.0, "took {:.1} s", c.secs);
    Ok(format!(
        "{} queries, {} users: q2a MAP {:.4} >= raw MAP {:.4}, {:.1} s",
        c.log.len(),
        c.raw.n_users,
        c.q2a.map_score,
        c.raw.map_score,
        c.secs
    ))
}

fn c6_qrels_structure() -> Check {
    let c = collection()?;
    let mut by_query: HashMap<u64, Vec<&QrelEntry>> = HashMap::new();
    for r in &c.qrels {
        by_query.entry(r.query_id).or_default().push(r);
    }
    let mut ok = 0;
    for q in &c.log {
        let rows = by_query.get(&q.query_id).map(Vec::as_slice).unwrap_or(&[]);
        let gold: Vec<&&QrelEntry> = rows.iter().filter(|r| r.grade == 2).collect();
        let ones = rows.iter().filter(|r| r.grade == 1).count();
        let source = q.source();
        let others = c.corpus.answers_of(&source).len() - 1;
        let accepted = c.corpus.accepted_answer(&source);
        if gold.len() == 1 && Some(gold[0].doc_id.post) == accepted && ones == others {
            ok += 1;
        }
    }
    ensure!(ok == c.log.len(), "{ok}/{} queries well formed", c.log.len());
    Ok(format!("{ok}/{} queries: one grade-2 row, grade-1 rows = other answers", c.log.len()))
}

// 4 ------------------------------------------------------------------------

const FILLERS: [&str; 5] = ["the", "is", "a", "of", "to"];

/// Best `l` stems by brute force over all subsets: the subset whose entries,
/// sorted by (score desc, first position asc), compare smallest.
fn brute_force_top(cands: &[(String, usize, f64)], l: usize) -> Vec<String> {
    let n = cands.len();
    let l = l.min(n);
    let key = |idx: &[usize]| {
        let mut v: Vec<(f64, usize)> = idx.iter().map(|&i| (cands[i].2, cands[i].1)).collect();
        v.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        v
    };
    let better = |a: &[(f64, usize)], b: &[(f64, usize)]| {
        for (x, y) in a.iter().zip(b) {
            match y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)) {
                std::cmp::Ordering::Less => return true,
                std::cmp::Ordering::Greater => return false,
                std::cmp::Ordering::Equal => {}
            }
        }
        false
    };
    type Key = Vec<(f64, usize)>;
    let mut best: Option<(Vec<usize>, Key)> = None;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != l {
            continue;
        }
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let k = key(&idx);
        if best.as_ref().is_none_or(|(_, bk)| better(&k, bk)) {
            best = Some((idx, k));
        }
    }
    let mut idx = best.map(|b| b.0).unwrap_or_default();
    idx.sort_by_key(|&i| cands[i].1);
    idx.into_iter().map(|i| cands[i].0.clone()).collect()
}

fn random_words(rng: &mut ChaCha8Rng, vocab: &[String], len: std::ops::Range<usize>) -> Vec<String> {
    let n = rng.gen_range(len);
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.2) {
                FILLERS.choose(rng).unwrap().to_string()
            } else {
                let u: f64 = rng.gen();
                vocab[(u * u * vocab.len() as f64) as usize].clone()
            }
        })
        .collect()
}

fn c4_extraction_oracle() -> Check {
    let analyzer = Analyzer::default();
    for f in FILLERS {
        ensure!(analyzer.is_stopword(f), "{f} is not a stopword");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let vocab = synth::vocabulary(25, &mut rng);
    let docs: Vec<Vec<String>> = (0..300).map(|_| random_words(&mut rng, &vocab, 5..40)).collect();
    let stats = TermStats::build(docs.iter().map(|d| analyzer.tokenize(&d.join(" "))).collect::<Vec<_>>().iter());
    let n_docs = docs.len() as f64;
    let mut df: HashMap<String, f64> = HashMap::new();
    for d in &docs {
        let set: HashSet<String> = d.iter().filter(|w| !FILLERS.contains(&w.as_str())).map(|w| stem(w)).collect();
        for s in set {
            *df.entry(s).or_default() += 1.0;
        }
    }
    let dist = LengthDistribution::uniform(1, 5).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for qi in 0..100u64 {
        let mut distinct = vocab.clone();
        distinct.shuffle(&mut rng);
        distinct.truncate(rng.gen_range(1..=12));
        let title = random_words(&mut rng, &distinct, 1..6);
        let body = random_words(&mut rng, &distinct, 0..30);
        let doc = QuestionDoc::new(&analyzer, &title.join(" "), &body.join(" "));

        let mut cands: Vec<(String, usize, f64)> = Vec::new();
        for (pos, w) in title.iter().chain(&body).enumerate() {
            if FILLERS.contains(&w.as_str()) {
                continue;
            }
            let s = stem(w);
            match cands.iter_mut().find(|c| c.0 == s) {
                Some(c) => c.2 += 1.0,
                None => cands.push((s, pos, 1.0)),
            }
        }
        for c in &mut cands {
            let d = df.get(&c.0).copied().unwrap_or(0.0);
            c.2 *= ((n_docs + 1.0) / (d + 1.0)).ln() + 1.0;
        }
        if cands.is_empty() {
            ensure!(
                top_terms(&doc, &stats, IdfVariant::Smoothed, Strategy::TfidfTop, 3).is_err(),
                "question {qi}: empty question not rejected"
            );
            continue;
        }
        for l in 1..=6 {
            let got = top_terms(&doc, &stats, IdfVariant::Smoothed, Strategy::TfidfTop, l).map_err(|e| e.to_string())?;
            let want = brute_force_top(&cands, l);
            ensure!(got == want, "question {qi}, length {l}: {got:?} != {want:?}");
            checked += 1;
        }
        for s in 0..5 {
            let sd = seed::derive(9, "acceptance", &[qi, s]);
            let got = extract_query(&doc, &stats, &dist, sd, IdfVariant::Smoothed, Strategy::TfidfTop)
                .map_err(|e| e.to_string())?;
            ensure!((1..=5).contains(&got.len()), "length {} outside 1..=5", got.len());
            let want = brute_force_top(&cands, got.len());
            ensure!(got == want, "question {qi}, sampled extraction {got:?} != {want:?}");
            checked += 1;
        }
    }
    Ok(format!("100 questions, {checked} extractions equal the brute-force ranking"))
}

// 5 ------------------------------------------------------------------------

fn c5_length_fidelity() -> Check {
    let analyzer = Analyzer::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vocab = synth::vocabulary(8, &mut rng);
    let doc = QuestionDoc::new(&analyzer, &vocab[..3].join(" "), &vocab.join(" "));
    let stats = TermStats::build([&doc.tokens]);
    let n = 10_000u64;
    let lengths = |dist: &LengthDistribution, stage: &str| -> Result<Vec<usize>, String> {
        (0..n)
            .map(|i| {
                let sd = seed::derive(5, stage, &[i]);
                extract_query(&doc, &stats, dist, sd, IdfVariant::Smoothed, Strategy::TfidfTop)
                    .map(|q| q.len())
                    .map_err(|e| e.to_string())
            })
            .collect()
    };
    let uniform = LengthDistribution::uniform(1, 5).map_err(|e| e.to_string())?;
    let mut counts = [0f64; 5];
    for l in lengths(&uniform, "uniform")? {
        counts[l - 1] += 1.0;
    }
    let expected = n as f64 / 5.0;
    let chi2: f64 = counts.iter().map(|o| (o - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(4.0).map_err(|e| e.to_string())?.cdf(chi2);
    ensure!(p > 0.01, "uniform lengths {counts:?}: chi2 {chi2:.2}, p {p:.4}");

    let pmf = LengthDistribution::parse_pmf("# lengths\n1 0.25\n2 0.35\n3 0.22\n4 0.10\n5 0.05\n6 0.03\n")
        .map_err(|e| e.to_string())?;
    let ls = lengths(&pmf, "histogram")?;
    let mean = ls.iter().sum::<usize>() as f64 / ls.len() as f64;
    let target = pmf.mean();
    let dev = (mean - target).abs() / target;
    ensure!(dev <= 0.02, "histogram mean {mean:.4} vs pmf mean {target:.4}");
    Ok(format!(
        "uniform chi2 {chi2:.2} (p {p:.3}); histogram mean {mean:.4} vs {target:.4} ({:.2}%)",
        dev * 100.0
    ))
}

// 7 ------------------------------------------------------------------------

fn c7_tf_norm() -> Check {
    let analyzer = Analyzer::default();
    let mut lines = Vec::new();
    for seed_value in [7, 17, 27] {
        let pairs = synth::human_like_pairs(200, 3, seed_value);
        let mut tsv = Vec::new();
        synth::write_pairs(&pairs, &mut tsv).map_err(|e| e.to_string())?;
        let pairs = read_pairs(&tsv[..], &analyzer).map_err(|e| e.to_string())?;
        let s = pair_stats(&pairs, &analyzer);
        ensure!(
            s.tf_norm_query > s.tf_norm_nonquery,
            "seed {seed_value}: query {:.4} <= non-query {:.4}",
            s.tf_norm_query,
            s.tf_norm_nonquery
        );
        lines.push(format!("{:.4} > {:.4}", s.tf_norm_query, s.tf_norm_nonquery));
    }
    Ok(format!("mean tf_norm query vs non-query words: {}", lines.join(", ")))
}

// 8 ------------------------------------------------------------------------

fn random_problem(rng: &mut ChaCha8Rng, objective: Objective) -> Problem {
    let n_groups = rng.gen_range(1..6);
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut groups = Vec::new();
    for _ in 0..n_groups {
        let start = x.len();
        let size = rng.gen_range(2..8);
        for j in 0..size {
            x.push(std::array::from_fn(|_| rng.gen_range(-2.0..2.0)));
            y.push(if j < 2 { j == 0 } else { rng.gen_bool(0.4) });
        }
        groups.push(start..x.len());
    }
    Problem {
        x,
        y,
        groups,
        objective,
        l2: rng.gen_range(0.0..0.1),
    }
}

fn c8_gradient() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-6;
    let mut worst = 0f64;
    for i in 0..50 {
        let objective = if i % 2 == 0 { Objective::Logistic } else { Objective::PairwiseHinge };
        let prob = random_problem(&mut rng, objective);
        let params: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = prob.gradient(&params);
        for j in 0..params.len() {
            let mut up = params.clone();
            let mut down = params.clone();
            up[j] += h;
            down[j] -= h;
            let numeric = (prob.loss(&up) - prob.loss(&down)) / (2.0 * h);
            let err = (g[j] - numeric).abs() / g[j].abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    ensure!(worst <= 1e-6, "max relative gradient error {worst:e}");

    let mut increases = 0;
    for _ in 0..50 {
        let prob = random_problem(&mut rng, Objective::Logistic);
        let (_, losses) = prob.descend(1e-3, 300);
        increases += losses.windows(2).filter(|w| w[1] > w[0]).count();
    }
    ensure!(increases == 0, "{increases} loss increases at lr 1e-3");
    Ok(format!(
        "50 instances, max relative gradient error {worst:.1e}; loss non-increasing over 300 epochs at lr 1e-3"
    ))
}

// 9 ------------------------------------------------------------------------

fn c9_personalization() -> Check {
    let pairs = synth::divergent_pairs(20, 30, 9);
    let stats = pair_term_stats(&pairs);
    let report = compare_global_personalized(&pairs, &stats, 10, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let better = report
        .per_annotator
        .iter()
        .filter(|a| a.personal.mean_ap > a.global.mean_ap)
        .count();
    let n = report.per_annotator.len();
    let frac = better as f64 / n as f64;
    ensure!(frac >= 0.9, "{better}/{n} annotators improved");
    Ok(format!(
        "{better}/{n} annotators improved; mean AP global {:.3}, personal {:.3}",
        report.global_overall.mean_ap, report.personal_overall.mean_ap
    ))
}

// 10 -----------------------------------------------------------------------

fn c10_agreement() -> Check {
    fn set(s: &str) -> BTreeSet<&str> {
        s.split_whitespace().collect()
    }
    ensure!(jaccard(&set("a b c"), &set("a b c")) == 1.0, "identical sets");
    ensure!(jaccard(&set("a b"), &set("c d")) == 0.0, "disjoint sets");
    ensure!(jaccard(&set("a b c"), &set("b c d")) == 0.5, "overlap {{a,b,c}} / {{b,c,d}}");

    let all = synth::human_like_pairs(50, 5, 10);
    let pairs: Vec<_> = all
        .chunks(5)
        .enumerate()
        .flat_map(|(q, chunk)| chunk[..3 + q % 3].to_vec())
        .collect();
    let report = agreement_report(&pairs);

    type Question = (String, String, String);
    let mut groups: Vec<(Question, Vec<Vec<String>>)> = Vec::new();
    for p in &pairs {
        let key = (p.forum_id.clone(), p.title.clone(), p.body.clone());
        let mut stems: Vec<String> = p.query.tokens.iter().map(|t| t.stem.clone()).collect();
        stems.sort();
        stems.dedup();
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.1.push(stems),
            None => groups.push((key, vec![stems])),
        }
    }
    let mut per_question = Vec::new();
    for (_, queries) in &groups {
        let mut sims = Vec::new();
        for i in 0..queries.len() {
            for j in i + 1..queries.len() {
                let inter = queries[i].iter().filter(|s| queries[j].contains(s)).count();
                let union = queries[i].len() + queries[j].len() - inter;
                sims.push(inter as f64 / union as f64);
            }
        }
        per_question.push(sims.iter().sum::<f64>() / sims.len() as f64);
    }
    let oracle = per_question.iter().sum::<f64>() / per_question.len() as f64;
    ensure!(groups.len() == 50, "{} question groups", groups.len());
    ensure!(report.per_question.len() == 50, "{} questions reported", report.per_question.len());
    ensure!(
        rel_err(report.mean_jaccard, oracle) < 1e-12,
        "mean Jaccard {} vs oracle {oracle}",
        report.mean_jaccard
    );
    Ok(format!("identities hold; 50 questions, mean Jaccard {oracle:.6} matches the pairwise oracle"))
}

// 11 -----------------------------------------------------------------------

fn c11_porter() -> Check {
    let voc = include_str!("data/porter_voc.txt");
    let out = include_str!("data/porter_output.txt");
    let mut total = 0;
    let mut wrong = 0;
    for (w, expected) in voc.lines().zip(out.lines()) {
        total += 1;
        if stem(w.trim()) != expected.trim() {
            wrong += 1;
        }
    }
    ensure!(total == 23532 && wrong == 0, "{wrong} of {total} words differ");
    Ok(format!("{total}/{total} reference words agree"))
}

// 12 -----------------------------------------------------------------------

fn c12_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let spec = DumpSpec {
        questions_per_forum: 40,
        seed: 12,
        ..Default::default()
    };
    synth::write_dump(&d.join("dump"), &spec).map_err(|e| e.to_string())?;
    let mut pairs = BufWriter::new(File::create(d.join("pairs.tsv")).map_err(|e| e.to_string())?);
    synth::write_pairs(&synth::human_like_pairs(20, 3, 12), &mut pairs).map_err(|e| e.to_string())?;
    pairs.flush().map_err(|e| e.to_string())?;
    drop(pairs);

    let cfg = |out: &str| PipelineConfig {
        dump_dir: d.join("dump"),
        output_dir: d.join(out),
        pairs: Some(d.join("pairs.tsv")),
        min_user_queries: 20,
        seed: 12,
        filter: FilterPolicy {
            min_forum_questions: 30,
            min_other_answers: 5,
        },
        ..Default::default()
    };
    let analyzer = Analyzer::default();
    let a = run_pipeline(&cfg("a"), &analyzer).map_err(|e| e.to_string())?;
    let b = run_pipeline(&cfg("b"), &analyzer).map_err(|e| e.to_string())?;
    let mut files: Vec<&String> = a.stages.iter().flat_map(|s| s.artifacts.keys()).collect();
    let manifest = MANIFEST_FILE.to_string();
    files.push(&manifest);
    for f in &files {
        let x = std::fs::read(d.join("a").join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(d.join("b").join(f)).map_err(|e| e.to_string())?;
        ensure!(x == y, "{f} differs between runs");
    }
    ensure!(a == b, "manifests differ");
    Ok(format!("{} artifacts byte-identical across two runs", files.len()))
}

// 13 -----------------------------------------------------------------------

fn parse_peak(path: &Path) -> Result<(u64, usize, f64), String> {
    let base = CURRENT.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    let start = Instant::now();
    let input = BufReader::new(File::open(path).map_err(|e| e.to_string())?);
    let mut rows = 0;
    for post in parse_posts(input, "big") {
        post.map_err(|e| e.to_string())?;
        rows += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((rows, PEAK.load(Ordering::Relaxed) - base, secs))
}

fn c13_ingest_scalability() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut measured = Vec::new();
    for rows in [1_000usize, 1_000_000] {
        let path = dir.path().join(format!("posts-{rows}.xml"));
        let mut out = BufWriter::new(File::create(&path).map_err(|e| e.to_string())?);
        synth::write_large_posts(&mut out, rows, 13).map_err(|e| e.to_string())?;
        out.flush().map_err(|e| e.to_string())?;
        drop(out);
        let (n, peak, secs) = parse_peak(&path)?;
        ensure!(n == rows as u64, "parsed {n} of {rows} rows");
        measured.push((peak, secs));
        std::fs::remove_file(&path).map_err(|e| e.to_string())?;
    }
    let (small, _) = measured[0];
    let (large, secs) = measured[1];
    let ratio = large as f64 / small as f64;
    ensure!(ratio < 10.0, "peak {large} B vs {small} B (ratio {ratio:.2})");
    ensure!(secs < 60.0, "10^6 rows took {secs:.1} s");
    Ok(format!(
        "peak heap {} KiB (10^6 rows) vs {} KiB (10^3 rows), ratio {ratio:.2}; {secs:.1} s",
        large / 1024,
        small / 1024
    ))
}

fn main() {
    let criteria: [Criterion; 13] = [
        ("Dirichlet scoring oracle", c1_dirichlet),
        ("evaluation oracle", c2_eval),
        ("q2a retrieval beats raw", c3_q2a_beats_raw),
        ("query extraction oracle", c4_extraction_oracle),
        ("length distribution fidelity", c5_length_fidelity),
        ("qrels structure", c6_qrels_structure),
        ("tf_norm discrimination", c7_tf_norm),
        ("ranker gradient check", c8_gradient),
        ("personalization", c9_personalization),
        ("Jaccard agreement", c10_agreement),
        ("Porter stemmer", c11_porter),
        ("end-to-end determinism", c12_determinism),
        ("ingest scalability", c13_ingest_scalability),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
