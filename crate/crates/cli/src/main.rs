use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use cqalog::analysis::{agreement_report, corpus_stats, pair_stats, write_histograms};
use cqalog::corpus::{
    eligible_by_forum, export_jsonl, filter_questions, ingest_dump, read_snapshot, sample_questions,
    write_snapshot, Corpus, ExclusionList, FilterPolicy, PostKey,
};
use cqalog::eval::{evaluate, format_table, user_map};
use cqalog::pipeline::{format_versions, run_pipeline, PipelineConfig};
use cqalog::ranker::{
    compare_global_personalized, pair_term_stats, rank_words, read_models, read_pairs, train_scoped, write_models,
    Objective, TrainConfig,
};
use cqalog::retrieval::{
    corpus_documents, load_index, read_run, save_index, search_log, write_run, InvertedIndex, Variant,
};
use cqalog::synth::{human_like_pairs, write_dump, write_pairs, DumpSpec};
use cqalog::synthesis::{
    corpus_term_stats, derive_log, derive_qrels, read_log, read_qrels, write_log, write_qrels, DeriveConfig,
    LengthDistribution, LengthSampling, NegativeSampling, QuestionDoc, Strategy,
};
use cqalog::text::{Analyzer, IdfVariant};

#[derive(Parser)]
#[command(name = "cqalog", about = "Synthetic IR collections from CQA forum dumps", disable_version_flag = true)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the tool version and artifact format versions.
    #[arg(long)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a dump directory into a corpus snapshot.
    Ingest {
        #[arg(long)]
        dump_dir: PathBuf,
        /// Forum exclusion list; Stack Overflow only when omitted.
        #[arg(long)]
        exclude_forums: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a JSON-lines export of the corpus.
        #[arg(long)]
        jsonl: Option<PathBuf>,
    },
    /// Filter eligible questions and optionally sample forums and questions.
    Sample {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        filter: FilterArgs,
        /// Number of forums to sample; all eligible questions when omitted.
        #[arg(long, requires = "per_forum")]
        forums: Option<usize>,
        #[arg(long)]
        per_forum: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive the query log and qrels.
    Derive {
        #[arg(long)]
        corpus: PathBuf,
        /// Question list from `sample`; all eligible questions when omitted.
        #[arg(long)]
        questions: Option<PathBuf>,
        #[command(flatten)]
        filter: FilterArgs,
        /// `uniform:MIN:MAX` or a pmf file.
        #[arg(long, default_value = "uniform:1:5")]
        length_dist: String,
        #[arg(long, default_value = "per-question")]
        length_sampling: LengthSampling,
        #[arg(long, default_value_t = 100)]
        min_user_queries: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "smoothed")]
        idf_variant: IdfVariant,
        /// Word-ranker model; TF-IDF selection when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Sampled grade-0 rows per query.
        #[arg(long, default_value_t = 0)]
        negatives: usize,
        #[arg(long)]
        out_log: PathBuf,
        #[arg(long)]
        out_qrels: PathBuf,
        /// Derivation report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Build an inverted index over answer documents.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "raw")]
        variant: Variant,
        #[arg(long, default_value_t = cqalog::retrieval::DEFAULT_MU)]
        mu: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every log query against an index.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = cqalog::retrieval::DEFAULT_K)]
        k: usize,
        /// Run tag; the index variant when omitted.
        #[arg(long)]
        tag: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// User-macro MAP and MRR of one or more runs.
    Eval {
        #[arg(long, required = true, num_args = 1..)]
        run: Vec<PathBuf>,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        log: PathBuf,
        /// Full reports as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Train a question-word ranker on question-query pairs.
    TrainRanker {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value = "global", value_parser = ["global", "per-user"])]
        scope: String,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the words of a question (title on the first line, body after).
    RankWords {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        question: PathBuf,
        /// Annotator whose model to use when the file holds per-user models.
        #[arg(long)]
        user: Option<String>,
    },
    /// Hold out the last K pairs per annotator and compare global against
    /// per-annotator models.
    CompareRanker {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Collection statistics of a log and question-query pair analyses.
    Analyze {
        #[arg(long, requires = "index")]
        log: Option<PathBuf>,
        /// Index whose document lengths to summarize.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the whole pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic multi-forum dump for trying the pipeline out.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        forums: usize,
        #[arg(long, default_value_t = 100)]
        questions_per_forum: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write a question-query pair dataset here.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long, default_value_t = 100)]
    min_forum_questions: u64,
    #[arg(long, default_value_t = 5)]
    min_other_answers: usize,
}

impl FilterArgs {
    fn policy(&self) -> FilterPolicy {
        FilterPolicy {
            min_forum_questions: self.min_forum_questions,
            min_other_answers: self.min_other_answers,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long, default_value = "logistic")]
    objective: Objective,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            l2: self.l2,
            objective: self.objective,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_file(path, |w| writeln!(w, "{text}"))
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    read_snapshot(&mut open(path)?).with_context(|| format!("reading snapshot {}", path.display()))
}

fn read_questions(path: &Path) -> Result<Vec<PostKey>> {
    let mut out = Vec::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let key = line
            .parse()
            .map_err(|e: String| anyhow::anyhow!("{}:{}: {e}", path.display(), n + 1))?;
        out.push(key);
    }
    Ok(out)
}

fn print_versions() {
    println!("cqalog {}", env!("CARGO_PKG_VERSION"));
    for (name, v) in format_versions() {
        println!("{name} format {v}");
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.version {
        print_versions();
        return Ok(());
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let Some(command) = cli.command else {
        bail!("no subcommand given (see --help)");
    };
    let analyzer = Analyzer::default();
    match command {
        Command::Ingest {
            dump_dir,
            exclude_forums,
            out,
            jsonl,
        } => {
            let exclusions = match exclude_forums {
                Some(p) => ExclusionList::load(&p)?,
                None => ExclusionList::default(),
            };
            let (corpus, report) = ingest_dump(&dump_dir, &exclusions)?;
            write_file(&out, |w| write_snapshot(&corpus, w).map_err(std::io::Error::other))?;
            write_json(&out.with_extension("stats.json"), &report)?;
            if let Some(p) = jsonl {
                write_file(&p, |w| export_jsonl(&corpus, w))?;
            }
            info!(
                "{} forums, {} posts, {} favorites",
                report.forums_parsed,
                report.posts,
                corpus.favorites().len()
            );
        }
        Command::Sample {
            corpus,
            filter,
            forums,
            per_forum,
            seed,
            out,
        } => {
            let corpus = load_corpus(&corpus)?;
            let eligible = filter_questions(&corpus, &filter.policy());
            let questions: Vec<PostKey> = match (forums, per_forum) {
                (Some(f), Some(p)) => sample_questions(&eligible_by_forum(&eligible), f, p, seed)?,
                _ => eligible.into_iter().collect(),
            };
            write_file(&out, |w| questions.iter().try_for_each(|q| writeln!(w, "{q}")))?;
            info!("{} questions", questions.len());
        }
        Command::Derive {
            corpus,
            questions,
            filter,
            length_dist,
            length_sampling,
            min_user_queries,
            seed,
            idf_variant,
            model,
            negatives,
            out_log,
            out_qrels,
            report,
        } => {
            let corpus = load_corpus(&corpus)?;
            let questions = match questions {
                Some(p) => read_questions(&p)?,
                None => filter_questions(&corpus, &filter.policy()).into_iter().collect(),
            };
            let model = match model {
                Some(p) => {
                    let mut ms = read_models(&std::fs::read_to_string(&p)?)?;
                    if ms.len() != 1 {
                        bail!("{}: expected one model, found {}", p.display(), ms.len());
                    }
                    ms.pop()
                }
                None => None,
            };
            let cfg = DeriveConfig {
                length: LengthDistribution::from_spec(&length_dist)?,
                sampling: length_sampling,
                min_user_queries,
                seed,
                idf_variant,
            };
            let strategy = model.as_ref().map_or(Strategy::TfidfTop, Strategy::Ranker);
            let stats = corpus_term_stats(&corpus, &analyzer);
            let (log, rep) = derive_log(&corpus, &questions, &stats, &analyzer, &cfg, strategy)?;
            let neg = (negatives > 0).then_some(NegativeSampling {
                per_query: negatives,
                seed,
            });
            let qrels = derive_qrels(&corpus, &log, neg.as_ref())?;
            write_file(&out_log, |w| write_log(&log, w))?;
            write_file(&out_qrels, |w| write_qrels(&qrels, w))?;
            if let Some(p) = report {
                write_json(&p, &rep)?;
            }
            info!("{} queries from {} users ({} qrels rows)", rep.queries, rep.users, qrels.len());
        }
        Command::Index {
            corpus,
            variant,
            mu,
            out,
        } => {
            if !(mu.is_finite() && mu > 0.0) {
                bail!("--mu must be positive");
            }
            let corpus = load_corpus(&corpus)?;
            let docs = corpus_documents(&corpus, &analyzer, variant)?;
            let index = InvertedIndex::build(docs, variant, mu)?;
            save_index(&index, &out)?;
            info!("{} documents, {} terms", index.num_docs(), index.num_terms());
        }
        Command::Search {
            index,
            log,
            k,
            tag,
            out,
        } => {
            let index = load_index(&index).with_context(|| format!("loading index {}", index.display()))?;
            let log = read_log(open(&log)?)?;
            let tag = tag.unwrap_or_else(|| index.variant.name().to_string());
            let (run, report) = search_log(&index, &log, k, &tag);
            write_file(&out, |w| write_run(&run, w))?;
            info!(
                "{} queries, {} empty, {} unseen terms dropped",
                report.queries, report.empty_queries, report.dropped_terms
            );
        }
        Command::Eval { run, qrels, log, json } => {
            let log = read_log(open(&log)?)?;
            let qrels = read_qrels(open(&qrels)?)?;
            let users = user_map(&log);
            let mut reports = Vec::new();
            for p in &run {
                let entries = read_run(open(p)?)?;
                let name = p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
                reports.push((name, evaluate(&entries, &qrels, &users)?));
            }
            let rows: Vec<(&str, _)> = reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
            print!("{}", format_table(&rows));
            if let Some(p) = json {
                let map: std::collections::BTreeMap<_, _> = rows.into_iter().collect();
                write_json(&p, &map)?;
            }
        }
        Command::TrainRanker {
            pairs,
            scope,
            train,
            out,
        } => {
            let pairs = read_pairs(open(&pairs)?, &analyzer)?;
            let stats = pair_term_stats(&pairs);
            let models = train_scoped(&pairs, &stats, scope == "per-user", &train.config())?;
            write_file(&out, |w| writeln!(w, "{}", write_models(&models)))?;
            info!("trained {} model(s) on {} pairs", models.len(), pairs.len());
        }
        Command::RankWords { model, question, user } => {
            let models = read_models(&std::fs::read_to_string(&model)?)?;
            let model = match (&user, models.len()) {
                (None, 1) => &models[0],
                (None, n) => bail!("{} holds {n} models; pick one with --user", model.display()),
                (Some(u), _) => models
                    .iter()
                    .find(|m| matches!(&m.scope, cqalog::ranker::Scope::PerUser(a) if a == u))
                    .with_context(|| format!("no model for user {u}"))?,
            };
            let stats = model
                .term_stats
                .as_ref()
                .context("model file carries no term statistics")?;
            let text = std::fs::read_to_string(&question)?;
            let (title, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
            let doc = QuestionDoc::new(&analyzer, title.trim(), body);
            let out = std::io::stdout();
            let mut out = out.lock();
            for (stem, score) in rank_words(model, &doc, stats)? {
                writeln!(out, "{stem}\t{score:.6}")?;
            }
        }
        Command::CompareRanker { pairs, k, train } => {
            let pairs = read_pairs(open(&pairs)?, &analyzer)?;
            let stats = pair_term_stats(&pairs);
            let report = compare_global_personalized(&pairs, &stats, k, &train.config())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Analyze {
            log,
            index,
            pairs,
            out_dir,
        } => {
            if log.is_none() && pairs.is_none() {
                bail!("nothing to analyze: give --log/--index and/or --pairs");
            }
            std::fs::create_dir_all(&out_dir)?;
            if let (Some(log), Some(index)) = (log, index) {
                let log = read_log(open(&log)?)?;
                let index = load_index(&index)?;
                let lengths: Vec<u64> = index
                    .doc_ids()
                    .iter()
                    .map(|d| u64::from(index.doc_len(d).unwrap_or(0)))
                    .collect();
                let stats = corpus_stats(&log, &lengths);
                write_json(&out_dir.join("collection.json"), &stats)?;
                write_histograms(&stats, &out_dir)?;
            }
            if let Some(p) = pairs {
                let pairs = read_pairs(open(&p)?, &analyzer)?;
                write_json(&out_dir.join("pairs.json"), &pair_stats(&pairs, &analyzer))?;
                write_json(&out_dir.join("agreement.json"), &agreement_report(&pairs))?;
            }
        }
        Command::Run { config } => {
            let mut cfg = PipelineConfig::load(&config)?;
            cfg.apply_path_overrides(|k| std::env::var(k).ok());
            let manifest = run_pipeline(&cfg, &analyzer)?;
            let files: BTreeSet<&String> = manifest.stages.iter().flat_map(|s| s.artifacts.keys()).collect();
            info!("wrote {} artifacts to {}", files.len(), cfg.output_dir.display());
            print!("{}", std::fs::read_to_string(cfg.output_dir.join("eval.txt"))?);
        }
        Command::Fixture {
            out,
            forums,
            questions_per_forum,
            seed,
            pairs,
        } => {
            let spec = DumpSpec {
                forums,
                questions_per_forum,
                seed,
                ..Default::default()
            };
            let summary = write_dump(&out, &spec)?;
            info!(
                "{} forums, {} questions, {} answers, {} favorites",
                summary.forums.len(),
                summary.questions,
                summary.answers,
                summary.favorites
            );
            if let Some(p) = pairs {
                let ps = human_like_pairs(questions_per_forum, 3, seed);
                write_file(&p, |w| write_pairs(&ps, w))?;
            }
        }
    }
    Ok(())
}
