//! Diversity-calibrated news re-ranking.
//!
//! The crate covers the full offline loop: article ingestion with topic and
//! locality labels, greedy topic/locality calibrated re-ranking, random-search
//! tuning of the calibration weights, LLM preview rewriting with
//! feedback-based reprompting, and the exposure/consumption divergence
//! evaluation of simulated or replayed experiments.

pub mod corpus;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod preview;
pub mod reranker;
pub mod runlog;
pub mod scoring;
pub mod simulate;
pub mod tuning;

pub use corpus::{Article, Corpus, LocalityLabel, LocalitySet, TopicLabel, UserProfile};
pub use distributions::{kl_divergence, Axis, Distribution, LocalityDistribution, TopicDistribution};
pub use error::{Error, Result};
pub use reranker::{rerank, CalibrationConfig, CalibrationTargets, Mode, RankedNewsletter, ScoredCandidate};
pub use runlog::{Group, RunLog};
