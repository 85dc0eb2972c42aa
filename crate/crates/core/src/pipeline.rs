//! Declarative end-to-end run: ingest, filter/sample, derive, index (raw and
//! q2a), search, evaluate, analyze. Every artifact lands in one output
//! directory next to a `manifest.json` with per-stage sha256 checksums.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{agreement_report, corpus_stats, pair_stats, write_histograms};
use crate::corpus::{
    eligible_by_forum, filter_questions, ingest_dump, sample_questions, write_snapshot, ExclusionList,
    FilterPolicy, PostKey, SNAPSHOT_VERSION,
};
use crate::eval::{evaluate, format_table, user_map, EvalReport};
use crate::ranker::{read_models, read_pairs, RankModel};
use crate::retrieval::{
    corpus_documents, save_index, search_log, write_run, InvertedIndex, Variant, INDEX_FORMAT_VERSION,
};
use crate::synthesis::{
    corpus_term_stats, derive_log, derive_qrels, write_log, write_qrels, DeriveConfig, LengthDistribution,
    LengthSampling, NegativeSampling, Strategy,
};
use crate::text::{Analyzer, IdfVariant};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

/// Environment variables that may replace path settings.
pub const PATH_OVERRIDES: [(&str, PathKey); 6] = [
    ("CQALOG_DUMP_DIR", PathKey::DumpDir),
    ("CQALOG_OUTPUT_DIR", PathKey::OutputDir),
    ("CQALOG_EXCLUDED_FORUMS", PathKey::ExcludedForums),
    ("CQALOG_LENGTH_DIST", PathKey::LengthDist),
    ("CQALOG_MODEL", PathKey::Model),
    ("CQALOG_PAIRS", PathKey::Pairs),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKey {
    DumpDir,
    OutputDir,
    ExcludedForums,
    /// Only when the length distribution is a pmf file.
    LengthDist,
    Model,
    Pairs,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("unsupported config schema version {0} (expected {CONFIG_SCHEMA_VERSION})")]
    UnsupportedSchema(u32),
    #[error("{key}: {message}")]
    Invalid { key: &'static str, message: String },
    #[error("{key}: {path} does not exist")]
    MissingPath { key: &'static str, path: String },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

fn stage_err<E: Into<Box<dyn std::error::Error + Send + Sync>>>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: e.into(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    #[default]
    TfidfTop,
    Ranker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub forums: usize,
    pub per_forum: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub dump_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Forum exclusion list; the built-in list when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded_forums: Option<PathBuf>,
    /// `uniform:MIN:MAX` or a pmf file path.
    pub length_dist: String,
    #[serde(default)]
    pub length_sampling: LengthSampling,
    pub min_user_queries: usize,
    pub mu: f64,
    pub k: usize,
    pub seed: u64,
    #[serde(default)]
    pub idf_variant: IdfVariant,
    #[serde(default)]
    pub strategy: StrategyKind,
    /// Word-ranker model file, required by the ranker strategy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Question-query pairs to analyze alongside the collection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    /// Sampled grade-0 qrels rows per query; 0 leaves them implicit.
    #[serde(default)]
    pub negatives_per_query: usize,
    pub filter: FilterPolicy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            dump_dir: PathBuf::from("dump"),
            output_dir: PathBuf::from("out"),
            excluded_forums: None,
            length_dist: LengthDistribution::default().to_string(),
            length_sampling: LengthSampling::default(),
            min_user_queries: 100,
            mu: crate::retrieval::DEFAULT_MU,
            k: crate::retrieval::DEFAULT_K,
            seed: 0,
            idf_variant: IdfVariant::default(),
            strategy: StrategyKind::default(),
            model: None,
            pairs: None,
            negatives_per_query: 0,
            filter: FilterPolicy::default(),
            sample: None,
        }
    }
}

fn is_pmf_path(spec: &str) -> bool {
    !spec.starts_with("uniform:")
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.message().to_string(),
        })?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::UnsupportedSchema(cfg.schema_version));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Read a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.map_paths(|p| if p.is_relative() { base.join(p) } else { p.to_path_buf() });
        Ok(cfg)
    }

    fn map_paths(&mut self, f: impl Fn(&Path) -> PathBuf) {
        self.dump_dir = f(&self.dump_dir);
        self.output_dir = f(&self.output_dir);
        for p in [&mut self.excluded_forums, &mut self.model, &mut self.pairs].into_iter().flatten() {
            *p = f(p);
        }
        if is_pmf_path(&self.length_dist) {
            self.length_dist = f(Path::new(&self.length_dist)).display().to_string();
        }
    }

    /// Replace path settings from `lookup` (normally the process
    /// environment). Parameters are never overridden.
    pub fn apply_path_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for (var, key) in PATH_OVERRIDES {
            let Some(v) = lookup(var) else { continue };
            match key {
                PathKey::DumpDir => self.dump_dir = v.into(),
                PathKey::OutputDir => self.output_dir = v.into(),
                PathKey::ExcludedForums => self.excluded_forums = Some(v.into()),
                PathKey::LengthDist if is_pmf_path(&self.length_dist) => self.length_dist = v,
                PathKey::LengthDist => {}
                PathKey::Model => self.model = Some(v.into()),
                PathKey::Pairs => self.pairs = Some(v.into()),
            }
        }
    }

    /// Check parameters and the presence of every input path.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key, message: &str| {
            Err(ConfigError::Invalid {
                key,
                message: message.to_string(),
            })
        };
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::UnsupportedSchema(self.schema_version));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return invalid("mu", "must be a positive number");
        }
        if self.k == 0 {
            return invalid("k", "must be at least 1");
        }
        if let Some(s) = self.sample {
            if s.forums == 0 || s.per_forum == 0 {
                return invalid("sample", "forums and per_forum must be at least 1");
            }
        }
        let require = |key, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(ConfigError::MissingPath {
                    key,
                    path: p.display().to_string(),
                })
            }
        };
        if !self.dump_dir.is_dir() {
            return Err(ConfigError::MissingPath {
                key: "dump_dir",
                path: self.dump_dir.display().to_string(),
            });
        }
        if let Some(p) = &self.excluded_forums {
            require("excluded_forums", p)?;
        }
        if let Some(p) = &self.pairs {
            require("pairs", p)?;
        }
        match (self.strategy, &self.model) {
            (StrategyKind::Ranker, None) => return invalid("model", "the ranker strategy needs a model file"),
            (StrategyKind::Ranker, Some(p)) => require("model", p)?,
            (StrategyKind::TfidfTop, _) => {}
        }
        if is_pmf_path(&self.length_dist) {
            require("length_dist", Path::new(&self.length_dist))?;
        }
        self.length_distribution().map(|_| ())
    }

    pub fn length_distribution(&self) -> Result<LengthDistribution, ConfigError> {
        LengthDistribution::from_spec(&self.length_dist).map_err(|e| ConfigError::Invalid {
            key: "length_dist",
            message: e.to_string(),
        })
    }
}

/// Everything that determines the pipeline's output apart from the dump
/// itself: parameters plus the content of auxiliary input files. Paths are
/// left out so that the hash does not depend on where files live.
#[derive(Serialize)]
struct HashedParameters<'a> {
    schema_version: u32,
    filter: &'a FilterPolicy,
    sample: &'a Option<SampleConfig>,
    exclusions: &'a ExclusionList,
    length: &'a LengthDistribution,
    length_sampling: LengthSampling,
    min_user_queries: usize,
    mu: f64,
    k: usize,
    seed: u64,
    idf_variant: IdfVariant,
    strategy: StrategyKind,
    model_sha256: Option<String>,
    pairs_sha256: Option<String>,
    negatives_per_query: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// Artifact path relative to the output directory -> sha256.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub formats: BTreeMap<String, u32>,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

/// Format versions of every artifact kind.
pub fn format_versions() -> BTreeMap<String, u32> {
    BTreeMap::from([
        ("config".to_string(), CONFIG_SCHEMA_VERSION),
        ("corpus_snapshot".to_string(), SNAPSHOT_VERSION),
        ("index".to_string(), INDEX_FORMAT_VERSION),
    ])
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut hasher = Sha256::new();
    let mut file = File::open(path)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

struct Run<'a> {
    dir: &'a Path,
    stages: Vec<StageRecord>,
}

impl Run<'_> {
    fn create(&self, rel: &str) -> std::io::Result<BufWriter<File>> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(BufWriter::new(File::create(path)?))
    }

    fn write_with(
        &self,
        rel: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> std::io::Result<()> {
        let mut w = self.create(rel)?;
        f(&mut w)?;
        w.flush()
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        text.push('\n');
        self.write_with(rel, |w| w.write_all(text.as_bytes()))
    }

    fn record(&mut self, stage: &'static str, rels: &[String]) -> Result<(), PipelineError> {
        let mut artifacts = BTreeMap::new();
        for rel in rels {
            let sum = sha256_file(&self.dir.join(rel)).map_err(stage_err(stage))?;
            artifacts.insert(rel.clone(), sum);
        }
        info!("stage {stage} done ({} artifacts)", artifacts.len());
        self.stages.push(StageRecord {
            stage: stage.to_string(),
            artifacts,
        });
        Ok(())
    }
}

fn read_file(key: &'static str, p: &Path) -> Result<Vec<u8>, ConfigError> {
    std::fs::read(p).map_err(|source| ConfigError::Io {
        path: format!("{key} {}", p.display()),
        source,
    })
}

/// Run every stage into `cfg.output_dir` and return the manifest.
///
/// An `INCOMPLETE` marker sits in the output directory until the manifest is
/// written; a failed run leaves it in place.
pub fn run_pipeline(cfg: &PipelineConfig, analyzer: &Analyzer) -> Result<Manifest, PipelineError> {
    cfg.validate()?;
    let length = cfg.length_distribution()?;
    let exclusions = match &cfg.excluded_forums {
        Some(p) => {
            let text = String::from_utf8_lossy(&read_file("excluded_forums", p)?).into_owned();
            ExclusionList::parse(&text).map_err(|message| ConfigError::Parse {
                path: p.display().to_string(),
                message,
            })?
        }
        None => ExclusionList::default(),
    };
    let model: Option<RankModel> = match &cfg.model {
        Some(p) if cfg.strategy == StrategyKind::Ranker => {
            let text = String::from_utf8_lossy(&read_file("model", p)?).into_owned();
            let mut models = read_models(&text).map_err(|e| ConfigError::Parse {
                path: p.display().to_string(),
                message: e.to_string(),
            })?;
            if models.len() != 1 {
                return Err(ConfigError::Invalid {
                    key: "model",
                    message: format!("expected one model, found {}", models.len()),
                }
                .into());
            }
            models.pop()
        }
        _ => None,
    };
    let file_hash = |key, p: &Option<PathBuf>| -> Result<Option<String>, ConfigError> {
        p.as_ref().map(|p| read_file(key, p).map(|b| sha256_hex(&b))).transpose()
    };
    let params = HashedParameters {
        schema_version: cfg.schema_version,
        filter: &cfg.filter,
        sample: &cfg.sample,
        exclusions: &exclusions,
        length: &length,
        length_sampling: cfg.length_sampling,
        min_user_queries: cfg.min_user_queries,
        mu: cfg.mu,
        k: cfg.k,
        seed: cfg.seed,
        idf_variant: cfg.idf_variant,
        strategy: cfg.strategy,
        model_sha256: if cfg.strategy == StrategyKind::Ranker {
            file_hash("model", &cfg.model)?
        } else {
            None
        },
        pairs_sha256: file_hash("pairs", &cfg.pairs)?,
        negatives_per_query: cfg.negatives_per_query,
    };
    let config_hash = sha256_hex(&serde_json::to_vec(&params).expect("parameters serialize"));

    let dir = cfg.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(stage_err("setup"))?;
    std::fs::write(dir.join(INCOMPLETE_MARKER), b"").map_err(stage_err("setup"))?;
    match std::fs::remove_file(dir.join(MANIFEST_FILE)) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(stage_err("setup")(e)),
        _ => {}
    }
    let mut run = Run {
        dir,
        stages: Vec::new(),
    };

    // ingest
    let (corpus, ingest_report) = ingest_dump(&cfg.dump_dir, &exclusions).map_err(stage_err("ingest"))?;
    run.write_with("corpus.snap", |w| write_snapshot(&corpus, w).map_err(std::io::Error::other))
        .map_err(stage_err("ingest"))?;
    run.write_json("corpus.stats.json", &ingest_report).map_err(stage_err("ingest"))?;
    run.record("ingest", &["corpus.snap".into(), "corpus.stats.json".into()])?;

    // filter / sample
    let eligible = filter_questions(&corpus, &cfg.filter);
    let questions: Vec<PostKey> = match cfg.sample {
        Some(s) => sample_questions(&eligible_by_forum(&eligible), s.forums, s.per_forum, cfg.seed)
            .map_err(stage_err("sample"))?,
        None => eligible.into_iter().collect(),
    };
    run.write_with("questions.txt", |w| {
        questions.iter().try_for_each(|q| writeln!(w, "{q}"))
    })
    .map_err(stage_err("sample"))?;
    run.record("sample", &["questions.txt".into()])?;

    // derive
    let stats = corpus_term_stats(&corpus, analyzer);
    let derive_cfg = DeriveConfig {
        length,
        sampling: cfg.length_sampling,
        min_user_queries: cfg.min_user_queries,
        seed: cfg.seed,
        idf_variant: cfg.idf_variant,
    };
    let strategy = match &model {
        Some(m) => Strategy::Ranker(m),
        None => Strategy::TfidfTop,
    };
    let (log, derive_report) =
        derive_log(&corpus, &questions, &stats, analyzer, &derive_cfg, strategy).map_err(stage_err("derive"))?;
    let negatives = (cfg.negatives_per_query > 0).then_some(NegativeSampling {
        per_query: cfg.negatives_per_query,
        seed: cfg.seed,
    });
    let qrels = derive_qrels(&corpus, &log, negatives.as_ref()).map_err(stage_err("derive"))?;
    run.write_with("log.tsv", |w| write_log(&log, w)).map_err(stage_err("derive"))?;
    run.write_with("qrels.txt", |w| write_qrels(&qrels, w)).map_err(stage_err("derive"))?;
    run.write_json("derive.json", &derive_report).map_err(stage_err("derive"))?;
    run.record("derive", &["log.tsv".into(), "qrels.txt".into(), "derive.json".into()])?;

    // index
    let mut indexes: Vec<(Variant, InvertedIndex)> = Vec::new();
    let mut index_files = Vec::new();
    for variant in [Variant::Raw, Variant::Q2a] {
        let docs = corpus_documents(&corpus, analyzer, variant).map_err(stage_err("index"))?;
        let index = InvertedIndex::build(docs, variant, cfg.mu).map_err(stage_err("index"))?;
        let sub = format!("index-{}", variant.name());
        save_index(&index, &dir.join(&sub)).map_err(stage_err("index"))?;
        index_files.push(format!("{sub}/{}", crate::retrieval::INDEX_FILE));
        indexes.push((variant, index));
    }
    run.record("index", &index_files)?;

    // search
    let mut runs = Vec::new();
    let mut search_files = Vec::new();
    let mut batch_reports = BTreeMap::new();
    for (variant, index) in &indexes {
        let (entries, report) = search_log(index, &log, cfg.k, variant.name());
        let rel = format!("run-{}.txt", variant.name());
        run.write_with(&rel, |w| write_run(&entries, w)).map_err(stage_err("search"))?;
        search_files.push(rel);
        batch_reports.insert(variant.name(), report);
        runs.push((*variant, entries));
    }
    run.write_json("search.json", &batch_reports).map_err(stage_err("search"))?;
    search_files.push("search.json".into());
    run.record("search", &search_files)?;

    // eval
    let users = user_map(&log);
    let mut reports: Vec<(&'static str, EvalReport)> = Vec::new();
    for (variant, entries) in &runs {
        let report = evaluate(entries, &qrels, &users).map_err(stage_err("eval"))?;
        info!("{}: MAP {:.4} MRR {:.4}", variant.name(), report.map_score, report.mrr_score);
        reports.push((variant.name(), report));
    }
    let by_name: BTreeMap<&str, &EvalReport> = reports.iter().map(|(n, r)| (*n, r)).collect();
    run.write_json("eval.json", &by_name).map_err(stage_err("eval"))?;
    let rows: Vec<(&str, &EvalReport)> = reports.iter().map(|(n, r)| (*n, r)).collect();
    run.write_with("eval.txt", |w| w.write_all(format_table(&rows).as_bytes()))
        .map_err(stage_err("eval"))?;
    run.record("eval", &["eval.json".into(), "eval.txt".into()])?;

    // analyze
    let raw = &indexes[0].1;
    let doc_lengths: Vec<u64> = raw
        .doc_ids()
        .iter()
        .map(|d| u64::from(raw.doc_len(d).unwrap_or(0)))
        .collect();
    let collection = corpus_stats(&log, &doc_lengths);
    run.write_json("analysis/collection.json", &collection).map_err(stage_err("analyze"))?;
    std::fs::create_dir_all(dir.join("analysis")).map_err(stage_err("analyze"))?;
    write_histograms(&collection, &dir.join("analysis")).map_err(stage_err("analyze"))?;
    let mut analysis_files: Vec<String> = [
        "collection.json",
        "profile_size.csv",
        "topics_per_profile.csv",
        "query_ambiguity.csv",
        "query_length.csv",
    ]
    .iter()
    .map(|f| format!("analysis/{f}"))
    .collect();
    if let Some(p) = &cfg.pairs {
        let f = File::open(p).map_err(stage_err("analyze"))?;
        let pairs = read_pairs(BufReader::new(f), analyzer).map_err(stage_err("analyze"))?;
        run.write_json("analysis/pairs.json", &pair_stats(&pairs, analyzer))
            .map_err(stage_err("analyze"))?;
        run.write_json("analysis/agreement.json", &agreement_report(&pairs))
            .map_err(stage_err("analyze"))?;
        analysis_files.extend(["analysis/pairs.json".into(), "analysis/agreement.json".into()]);
    }
    run.record("analyze", &analysis_files)?;

    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        formats: format_versions(),
        config_hash,
        seed: cfg.seed,
        stages: run.stages,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(dir.join(MANIFEST_FILE), text).map_err(stage_err("manifest"))?;
    std::fs::remove_file(dir.join(INCOMPLETE_MARKER)).map_err(stage_err("manifest"))?;
    Ok(manifest)
}
