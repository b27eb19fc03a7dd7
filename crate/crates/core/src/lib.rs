//! Probabilistic question answering over tabular data.
//!
//! The pipeline turns a delimited table into a discrete Bayesian network
//! ([`ingest`], [`bayesnet`]), answers probabilistic queries exactly
//! ([`inference`], [`querylang`]), derives premise and insight stores
//! ([`artifacts`], [`retrieval`]), synthesizes benchmarks with exact ground
//! truth ([`benchgen`]) and scores prediction methods ([`eval`]). Every
//! artifact persists through [`storage`]; model calls go through [`llm`].

pub mod artifacts;
pub mod bayesnet;
pub mod benchgen;
pub mod eval;
pub mod inference;
pub mod ingest;
pub mod llm;
pub mod querylang;
pub mod retrieval;
pub mod storage;
