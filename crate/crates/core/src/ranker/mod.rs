//! Learning to rank question words: which words of a question would a person
//! put in their query. Linear models over per-word features, trained
//! globally or per annotator.

mod train;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::BufRead;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::average_precision;
use crate::synthesis::{candidates, Candidate, QuestionDoc};
use crate::text::{strip_html, Analyzer, TermStats, TextError, TokenizedText, MAX_TOKEN_CHARS};

pub use train::{sigmoid, Objective, Problem, TrainConfig};

pub const NUM_FEATURES: usize = 6;
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "tf_norm",
    "idf",
    "first_rel_pos",
    "in_title",
    "is_content",
    "stem_len_norm",
];

#[derive(Debug, Error)]
pub enum RankerError {
    #[error("question has no candidate terms")]
    EmptyQuestion,
    #[error("all training labels are {0}")]
    DegenerateLabels(u8),
    #[error("annotator {annotator} has {have} pairs, {need} needed")]
    InsufficientPairs {
        annotator: String,
        have: usize,
        need: usize,
    },
    #[error("held-out size k must be at least 1")]
    InvalidSplit,
    #[error("model has features {0:?}, expected {FEATURE_NAMES:?}")]
    FeatureMismatch(Vec<String>),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A question shown to an annotator and the query they wrote for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionQueryPair {
    pub pair_id: String,
    pub annotator_id: String,
    pub forum_id: String,
    /// Plain text.
    pub title: String,
    /// Plain text.
    pub body: String,
    pub question: QuestionDoc,
    pub query: TokenizedText,
    /// Per query token: true when its stem does not occur in the question.
    pub own_word_flags: Vec<bool>,
}

impl QuestionQueryPair {
    pub fn new(
        analyzer: &Analyzer,
        pair_id: &str,
        annotator_id: &str,
        forum_id: &str,
        title: &str,
        body: &str,
        query: &str,
    ) -> Self {
        let title = strip_html(title);
        let body = strip_html(body);
        let question = QuestionDoc::new(analyzer, &title, &body);
        let query = analyzer.tokenize(query);
        let in_question: HashSet<&str> = question.tokens.tokens.iter().map(|t| t.stem.as_str()).collect();
        let own_word_flags = query
            .tokens
            .iter()
            .map(|t| !in_question.contains(t.stem.as_str()))
            .collect();
        QuestionQueryPair {
            pair_id: pair_id.into(),
            annotator_id: annotator_id.into(),
            forum_id: forum_id.into(),
            title,
            body,
            question,
            query,
            own_word_flags,
        }
    }

    pub fn query_stems(&self) -> BTreeSet<&str> {
        self.query.tokens.iter().map(|t| t.stem.as_str()).collect()
    }
}

/// Tab-separated `pair_id annotator_id forum_id title body query`. A first
/// line starting with `pair_id` is taken as a header.
pub fn read_pairs(input: impl BufRead, analyzer: &Analyzer) -> Result<Vec<QuestionQueryPair>, RankerError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || (n == 0 && line.starts_with("pair_id")) {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(RankerError::Parse {
                line: n + 1,
                message: format!("expected 6 tab-separated fields, got {}", f.len()),
            });
        }
        out.push(QuestionQueryPair::new(analyzer, f[0], f[1], f[2], f[3], f[4], f[5]));
    }
    Ok(out)
}

/// Document frequencies over the distinct questions of a pair set.
pub fn pair_term_stats(pairs: &[QuestionQueryPair]) -> TermStats {
    let mut seen = HashSet::new();
    let mut stats = TermStats::default();
    for p in pairs {
        if seen.insert((&p.forum_id, &p.title, &p.body)) {
            stats.add(&p.question.tokens);
        }
    }
    stats
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordInstance {
    pub stem: String,
    pub features: [f64; NUM_FEATURES],
    pub label: bool,
}

/// Unstandardized features of one candidate, in [`FEATURE_NAMES`] order.
pub fn candidate_features(
    doc: &QuestionDoc,
    c: &Candidate,
    stats: &TermStats,
) -> Result<[f64; NUM_FEATURES], TextError> {
    let len = doc.len().max(1) as f64;
    Ok([
        c.tf as f64 / len,
        stats.idf(&c.stem)?,
        c.first_pos as f64 / len,
        f64::from(u8::from(c.in_title)),
        f64::from(u8::from(c.is_content)),
        c.stem.chars().count() as f64 / MAX_TOKEN_CHARS as f64,
    ])
}

/// One instance per distinct non-stopword stem of the question, labelled by
/// membership in the query.
pub fn featurize(pair: &QuestionQueryPair, stats: &TermStats) -> Result<Vec<WordInstance>, RankerError> {
    let cands = candidates(&pair.question);
    if cands.is_empty() {
        return Err(RankerError::EmptyQuestion);
    }
    let query = pair.query_stems();
    cands
        .iter()
        .map(|c| {
            Ok(WordInstance {
                features: candidate_features(&pair.question, c, stats)?,
                label: query.contains(c.stem.as_str()),
                stem: c.stem.clone(),
            })
        })
        .collect()
}

/// Per-feature z-score parameters. Constant features get unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn identity() -> Self {
        Standardizer {
            mean: vec![0.0; NUM_FEATURES],
            sd: vec![1.0; NUM_FEATURES],
        }
    }

    pub fn fit(rows: &[[f64; NUM_FEATURES]]) -> Self {
        if rows.is_empty() {
            return Self::identity();
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; NUM_FEATURES];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut sd = vec![0.0; NUM_FEATURES];
        for r in rows {
            for k in 0..NUM_FEATURES {
                sd[k] += (r[k] - mean[k]).powi(2) / n;
            }
        }
        let sd = sd
            .into_iter()
            .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { mean, sd }
    }

    pub fn apply(&self, x: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        std::array::from_fn(|k| (x[k] - self.mean[k]) / self.sd[k])
    }

    pub fn invert(&self, z: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        std::array::from_fn(|k| z[k] * self.sd[k] + self.mean[k])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Global,
    PerUser(String),
}

/// A linear word scorer over standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankModel {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardization: Standardizer,
    pub scope: Scope,
    /// Statistics the idf feature was computed with, so the model can rank
    /// words of new questions on its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub term_stats: Option<TermStats>,
}

impl RankModel {
    pub fn zero(scope: Scope) -> Self {
        RankModel {
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            weights: vec![0.0; NUM_FEATURES],
            bias: 0.0,
            standardization: Standardizer::identity(),
            scope,
            term_stats: None,
        }
    }

    pub fn check_features(&self) -> Result<(), RankerError> {
        if self.feature_names != FEATURE_NAMES || self.weights.len() != NUM_FEATURES {
            return Err(RankerError::FeatureMismatch(self.feature_names.clone()));
        }
        Ok(())
    }

    /// sigmoid(w·z + b) for raw features `x`.
    pub fn score(&self, x: &[f64; NUM_FEATURES]) -> f64 {
        let z = self.standardization.apply(x);
        sigmoid(self.weights.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>() + self.bias)
    }

    pub fn score_candidates(
        &self,
        doc: &QuestionDoc,
        cands: &[Candidate],
        stats: &TermStats,
    ) -> Result<Vec<f64>, TextError> {
        cands
            .iter()
            .map(|c| Ok(self.score(&candidate_features(doc, c, stats)?)))
            .collect()
    }
}

/// Fit a model to instances grouped by question.
pub fn train(groups: &[Vec<WordInstance>], scope: Scope, cfg: &TrainConfig) -> Result<RankModel, RankerError> {
    train_traced(groups, scope, cfg).map(|(m, _)| m)
}

/// As [`train`], also returning the loss before each epoch and after the last.
pub fn train_traced(
    groups: &[Vec<WordInstance>],
    scope: Scope,
    cfg: &TrainConfig,
) -> Result<(RankModel, Vec<f64>), RankerError> {
    let mut raw = Vec::new();
    let mut y = Vec::new();
    let mut ranges = Vec::new();
    for g in groups {
        let start = raw.len();
        for inst in g {
            raw.push(inst.features);
            y.push(inst.label);
        }
        ranges.push(start..raw.len());
    }
    if !y.iter().any(|&l| l) {
        return Err(RankerError::DegenerateLabels(0));
    }
    if y.iter().all(|&l| l) {
        return Err(RankerError::DegenerateLabels(1));
    }
    let standardization = Standardizer::fit(&raw);
    let problem = Problem {
        x: raw.iter().map(|r| standardization.apply(r)).collect(),
        y,
        groups: ranges,
        objective: cfg.objective,
        l2: cfg.l2,
    };
    let (params, losses) = problem.descend(cfg.lr, cfg.epochs);
    let model = RankModel {
        weights: params[..NUM_FEATURES].to_vec(),
        bias: params[NUM_FEATURES],
        standardization,
        ..RankModel::zero(scope)
    };
    Ok((model, losses))
}

/// Stems of the question by descending model score, ties by ascending stem.
pub fn rank_words(model: &RankModel, doc: &QuestionDoc, stats: &TermStats) -> Result<Vec<(String, f64)>, RankerError> {
    let cands = candidates(doc);
    let scores = model.score_candidates(doc, &cands, stats)?;
    Ok(order_by_score(cands.into_iter().map(|c| c.stem).zip(scores).collect()))
}

fn order_by_score(mut scored: Vec<(String, f64)>) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingEval {
    pub mean_ap: f64,
    pub p_at_len: f64,
    pub n_pairs: usize,
    /// Pairs whose query shares no stem with the question's candidates.
    pub n_skipped: usize,
}

/// Mean AP and P@l of the word rankings produced by `score`, where l is the
/// number of query stems among the candidates.
pub fn evaluate_with<F>(pairs: &[QuestionQueryPair], mut score: F) -> Result<RankingEval, RankerError>
where
    F: FnMut(&QuestionQueryPair, &[Candidate]) -> Result<Vec<f64>, RankerError>,
{
    let mut out = RankingEval::default();
    let (mut ap_sum, mut p_sum) = (0.0, 0.0);
    for pair in pairs {
        let cands = candidates(&pair.question);
        let query = pair.query_stems();
        let relevant: HashSet<&str> = cands
            .iter()
            .map(|c| c.stem.as_str())
            .filter(|s| query.contains(s))
            .collect();
        if relevant.is_empty() {
            out.n_skipped += 1;
            continue;
        }
        let scores = score(pair, &cands)?;
        let ranked = order_by_score(cands.iter().map(|c| c.stem.clone()).zip(scores).collect());
        let ranked: Vec<&str> = ranked.iter().map(|(s, _)| s.as_str()).collect();
        ap_sum += average_precision(&ranked, &relevant).unwrap_or(0.0);
        let l = relevant.len();
        p_sum += ranked[..l].iter().filter(|s| relevant.contains(*s)).count() as f64 / l as f64;
        out.n_pairs += 1;
    }
    if out.n_pairs > 0 {
        out.mean_ap = ap_sum / out.n_pairs as f64;
        out.p_at_len = p_sum / out.n_pairs as f64;
    }
    Ok(out)
}

pub fn evaluate_ranking(
    model: &RankModel,
    pairs: &[QuestionQueryPair],
    stats: &TermStats,
) -> Result<RankingEval, RankerError> {
    evaluate_with(pairs, |p, c| Ok(model.score_candidates(&p.question, c, stats)?))
}

/// TF·IDF baseline scored the same way as a model.
pub fn evaluate_tfidf(pairs: &[QuestionQueryPair], stats: &TermStats) -> Result<RankingEval, RankerError> {
    evaluate_with(pairs, |_, cands| {
        cands
            .iter()
            .map(|c| Ok(c.tf as f64 * stats.idf(&c.stem)?))
            .collect()
    })
}

/// Featurize every pair, skipping (with a warning) questions without candidates.
pub fn featurize_all(pairs: &[QuestionQueryPair], stats: &TermStats) -> Result<Vec<Vec<WordInstance>>, RankerError> {
    let groups: Vec<Result<Vec<WordInstance>, RankerError>> =
        pairs.par_iter().map(|p| featurize(p, stats)).collect();
    let mut out = Vec::with_capacity(groups.len());
    for (g, p) in groups.into_iter().zip(pairs) {
        match g {
            Ok(g) => out.push(g),
            Err(RankerError::EmptyQuestion) => warn!("pair {}: no candidate terms", p.pair_id),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Pairs grouped by annotator, keeping input order within each group.
pub fn by_annotator(pairs: &[QuestionQueryPair]) -> BTreeMap<&str, Vec<&QuestionQueryPair>> {
    let mut out: BTreeMap<&str, Vec<&QuestionQueryPair>> = BTreeMap::new();
    for p in pairs {
        out.entry(p.annotator_id.as_str()).or_default().push(p);
    }
    out
}

/// Train one model on all pairs, or one per annotator.
pub fn train_scoped(
    pairs: &[QuestionQueryPair],
    stats: &TermStats,
    per_user: bool,
    cfg: &TrainConfig,
) -> Result<Vec<RankModel>, RankerError> {
    if !per_user {
        let mut m = train(&featurize_all(pairs, stats)?, Scope::Global, cfg)?;
        m.term_stats = Some(stats.clone());
        return Ok(vec![m]);
    }
    by_annotator(pairs)
        .into_par_iter()
        .map(|(a, ps)| {
            let owned: Vec<QuestionQueryPair> = ps.into_iter().cloned().collect();
            let mut m = train(&featurize_all(&owned, stats)?, Scope::PerUser(a.to_string()), cfg)?;
            m.term_stats = Some(stats.clone());
            Ok(m)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorComparison {
    pub annotator_id: String,
    pub n_train: usize,
    pub n_test: usize,
    pub global: RankingEval,
    pub personal: RankingEval,
    /// Personal minus global mean AP.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizationReport {
    pub k: usize,
    pub per_annotator: Vec<AnnotatorComparison>,
    pub mean_delta: f64,
    pub improved: usize,
    pub worsened: usize,
    pub tied: usize,
    /// Two-sided exact sign test over non-tied annotators.
    pub sign_test_p: f64,
    pub global_overall: RankingEval,
    pub personal_overall: RankingEval,
}

impl PersonalizationReport {
    pub fn fraction_improved(&self) -> f64 {
        if self.per_annotator.is_empty() {
            0.0
        } else {
            self.improved as f64 / self.per_annotator.len() as f64
        }
    }
}

/// Two-sided exact binomial test of `successes` out of `n` at p = 1/2.
pub fn sign_test(successes: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let tail = successes.min(n - successes);
    let ln_half_n = -(n as f64) * 2f64.ln();
    let mut ln_choose = 0.0;
    let mut p = 0.0;
    for i in 0..=tail {
        if i > 0 {
            ln_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        p += (ln_choose + ln_half_n).exp();
    }
    (2.0 * p).min(1.0)
}

/// Hold out each annotator's last `k` pairs; train a global model on every
/// annotator's remaining pairs and one model per annotator on their own, then
/// compare both on each annotator's held-out pairs.
pub fn compare_global_personalized(
    pairs: &[QuestionQueryPair],
    stats: &TermStats,
    k: usize,
    cfg: &TrainConfig,
) -> Result<PersonalizationReport, RankerError> {
    if k == 0 {
        return Err(RankerError::InvalidSplit);
    }
    let groups = by_annotator(pairs);
    let mut splits = Vec::new();
    for (a, ps) in &groups {
        if ps.len() < k + 1 {
            return Err(RankerError::InsufficientPairs {
                annotator: a.to_string(),
                have: ps.len(),
                need: k + 1,
            });
        }
        let cut = ps.len() - k;
        let train: Vec<QuestionQueryPair> = ps[..cut].iter().map(|p| (*p).clone()).collect();
        let test: Vec<QuestionQueryPair> = ps[cut..].iter().map(|p| (*p).clone()).collect();
        splits.push((a.to_string(), train, test));
    }

    let all_train: Vec<QuestionQueryPair> = splits.iter().flat_map(|(_, t, _)| t.iter().cloned()).collect();
    let global = train(&featurize_all(&all_train, stats)?, Scope::Global, cfg)?;

    let per_annotator: Vec<AnnotatorComparison> = splits
        .par_iter()
        .map(|(a, tr, te)| {
            let personal = train(&featurize_all(tr, stats)?, Scope::PerUser(a.clone()), cfg)?;
            let g = evaluate_ranking(&global, te, stats)?;
            let p = evaluate_ranking(&personal, te, stats)?;
            Ok(AnnotatorComparison {
                annotator_id: a.clone(),
                n_train: tr.len(),
                n_test: te.len(),
                global: g,
                personal: p,
                delta: p.mean_ap - g.mean_ap,
            })
        })
        .collect::<Result<_, RankerError>>()?;

    let improved = per_annotator.iter().filter(|c| c.delta > 0.0).count();
    let worsened = per_annotator.iter().filter(|c| c.delta < 0.0).count();
    let tied = per_annotator.len() - improved - worsened;
    let mean_delta = per_annotator.iter().map(|c| c.delta).sum::<f64>() / per_annotator.len().max(1) as f64;

    let all_test: Vec<QuestionQueryPair> = splits.iter().flat_map(|(_, _, t)| t.iter().cloned()).collect();
    let global_overall = evaluate_ranking(&global, &all_test, stats)?;
    let personal_overall = pooled(&per_annotator);
    Ok(PersonalizationReport {
        k,
        sign_test_p: sign_test(improved, improved + worsened),
        per_annotator,
        mean_delta,
        improved,
        worsened,
        tied,
        global_overall,
        personal_overall,
    })
}

fn pooled(rows: &[AnnotatorComparison]) -> RankingEval {
    let mut out = RankingEval::default();
    for r in rows {
        out.mean_ap += r.personal.mean_ap * r.personal.n_pairs as f64;
        out.p_at_len += r.personal.p_at_len * r.personal.n_pairs as f64;
        out.n_pairs += r.personal.n_pairs;
        out.n_skipped += r.personal.n_skipped;
    }
    if out.n_pairs > 0 {
        out.mean_ap /= out.n_pairs as f64;
        out.p_at_len /= out.n_pairs as f64;
    }
    out
}

/// Parse a model file holding either one model object or an array of
/// per-user models.
pub fn read_models(json: &str) -> Result<Vec<RankModel>, RankerError> {
    let value: serde_json::Value = serde_json::from_str(json).map_err(|e| RankerError::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let models = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|m| vec![m])
    }
    .map_err(|e| RankerError::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    for m in &models {
        RankModel::check_features(m)?;
    }
    Ok(models)
}

/// One model as an object, several as an array.
pub fn write_models(models: &[RankModel]) -> String {
    let json = match models {
        [m] => serde_json::to_string_pretty(m),
        ms => serde_json::to_string_pretty(ms),
    };
    json.expect("models serialize")
}
