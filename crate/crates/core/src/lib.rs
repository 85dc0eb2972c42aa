//! Derive a synthetic IR collection (query log with user profiles, answer
//! documents, graded relevance judgments) from CQA forum data dumps, and
//! evaluate retrieval over it.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`corpus`]: streaming dump ingest, linking, snapshot persistence, question
//!   filtering and sampling.
//! - [`text`]: HTML stripping, tokenization, Porter stemming, term statistics.
//! - [`synthesis`]: duplicate injection, query extraction, user retention, qrels.
//! - [`retrieval`]: inverted index and Dirichlet query-likelihood search.
//! - [`eval`]: MAP / MRR with user-macro averaging over TREC files.
//! - [`ranker`]: learning to rank question words, global and per-annotator.
//! - [`analysis`]: descriptive statistics over question-query pairs and logs.
//! - [`pipeline`]: config file and the end-to-end driver.

pub mod analysis;
pub mod corpus;
pub mod eval;
pub mod pipeline;
pub mod ranker;
pub mod retrieval;
pub mod seed;
pub mod synth;
pub mod synthesis;
pub mod text;
