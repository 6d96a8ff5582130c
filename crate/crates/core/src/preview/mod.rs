//! Personalized preview rewriting for articles that dual calibration adds
//! over topic calibration.
//!
//! Each article in the rewrite set is gated on embedding similarity to the
//! reader's history: a close enough history article yields an event-based
//! rewrite that references it, otherwise the rewrite references the reader's
//! top topics. Generation goes through an [`LlmClient`] and is validated with
//! article-level and newsletter-level checks, reprompting with feedback until
//! the checks pass or attempts run out.

mod checks;
mod embed;
mod llm;
mod pipeline;
mod prompt;
mod rouge;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use checks::{check_article_level, check_newsletter_level, ArticleCheckConfig, CheckOutcome, Rejection};
pub use embed::{Embedder, HashEmbedder, LookupEmbedder};
pub use llm::{
    GenerationParams, HttpClient, HttpClientConfig, LlmClient, LlmError, LlmRequest, MockClient,
    ReplayClient, ReplayEntry, ScriptedClient,
};
pub use pipeline::{
    rewrite_newsletter, rewrite_with_feedback, threshold_sweep, RewriteJob, RewriteLimits, SweepPair,
    SweepRow,
};
pub use prompt::{build_prompt, parse_response, Prompt, TEMPLATE_VERSION};
pub use rouge::{lcs_length, rouge_l, tokenize, RougeScores};

use crate::corpus::{Article, Corpus, TopicLabel, UserProfile};
use crate::distributions::{cosine, MassAccumulator};
use crate::error::{Error, Result};
use crate::reranker::RankedNewsletter;

/// Default similarity gate used during the experiment.
pub const DEFAULT_THETA_SIM: f64 = 0.4;
/// Gate at the quality inflection point of offline tuning.
pub const PILOT_THETA_SIM: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Event,
    Topic,
    None,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Event => "Event",
            Strategy::Topic => "Topic",
            Strategy::None => "None",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Event" => Ok(Strategy::Event),
            "Topic" => Ok(Strategy::Topic),
            "None" => Ok(Strategy::None),
            other => Err(Error::parse("strategy", format!("unknown strategy `{other}`"))),
        }
    }
}

/// Outcome of one article's rewrite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteResult {
    pub article_id: String,
    pub strategy: Strategy,
    pub new_headline: String,
    pub new_subhead: String,
    pub attempts: u32,
    pub context_article_id: Option<String>,
    pub accepted: bool,
    pub rejection_reasons: Vec<String>,
    pub warnings: Vec<String>,
    pub template_version: String,
}

/// Articles in the DC list that the TC list for the same reader-day lacks,
/// in DC rank order.
pub fn select_rewrite_set<'a>(tc: &RankedNewsletter, dc: &'a RankedNewsletter) -> Result<Vec<&'a str>> {
    if tc.user_id != dc.user_id || tc.date != dc.date {
        return Err(Error::InvalidArgument(format!(
            "newsletters differ: ({}, {}) vs ({}, {})",
            tc.user_id, tc.date, dc.user_id, dc.date
        )));
    }
    let in_tc: HashSet<&str> = tc.slots.iter().map(|s| s.article_id.as_str()).collect();
    Ok(dc
        .slots
        .iter()
        .map(|s| s.article_id.as_str())
        .filter(|id| !in_tc.contains(id))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyChoice {
    pub strategy: Strategy,
    /// Most similar history article and its cosine, when the gate passed.
    pub context: Option<(String, f64)>,
    /// Best similarity seen, whether or not it passed.
    pub max_similarity: Option<f64>,
}

/// Event when some history article's cosine strictly exceeds `theta_sim`,
/// Topic otherwise. History articles without embeddings are skipped.
pub fn choose_strategy(article: &Article, history: &[&Article], theta_sim: f64) -> Result<StrategyChoice> {
    let emb = article
        .embedding
        .as_deref()
        .ok_or_else(|| Error::MissingEmbedding(article.article_id.clone()))?;
    let mut best: Option<(&Article, f64)> = None;
    for h in history {
        let Some(sim) = h.embedding.as_deref().and_then(|e| cosine(emb, e)) else {
            continue;
        };
        if best.is_none_or(|(_, b)| sim > b) {
            best = Some((h, sim));
        }
    }
    let max_similarity = best.map(|(_, s)| s);
    Ok(match best {
        Some((h, sim)) if sim > theta_sim => StrategyChoice {
            strategy: Strategy::Event,
            context: Some((h.article_id.clone(), sim)),
            max_similarity,
        },
        _ => StrategyChoice {
            strategy: Strategy::Topic,
            context: None,
            max_similarity,
        },
    })
}

/// Weights for blending click history with onboarding ranks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopicBlend {
    pub click_weight: f64,
    pub onboarding_weight: f64,
}

impl Default for TopicBlend {
    fn default() -> Self {
        TopicBlend {
            click_weight: 0.7,
            onboarding_weight: 0.3,
        }
    }
}

/// Up to three topics ranked by `click_weight·p_click(t) + onboarding_weight·r(t)`
/// where `r` is the normalized reciprocal onboarding rank. Ties go to the
/// alphabetically first topic name.
pub fn top3_topics(
    user: &UserProfile,
    corpus: &Corpus,
    before: Option<NaiveDate>,
    blend: TopicBlend,
) -> Vec<TopicLabel> {
    let clicks = user
        .history_articles(corpus, before)
        .into_iter()
        .collect::<MassAccumulator<TopicLabel>>()
        .distribution();
    let mut weights = [0.0f64; 14];
    for t in TopicLabel::ALL {
        weights[t.index()] = blend.click_weight * clicks.get(t);
    }
    let mut seen = HashSet::new();
    let ranked: Vec<TopicLabel> = user
        .onboarding_topics
        .iter()
        .copied()
        .filter(|t| seen.insert(*t))
        .collect();
    let norm: f64 = (1..=ranked.len()).map(|r| 1.0 / r as f64).sum();
    for (i, t) in ranked.iter().enumerate() {
        weights[t.index()] += blend.onboarding_weight * (1.0 / (i + 1) as f64) / norm;
    }
    let mut topics: Vec<TopicLabel> = TopicLabel::ALL
        .into_iter()
        .filter(|t| weights[t.index()] > 0.0)
        .collect();
    topics.sort_by(|a, b| {
        weights[b.index()]
            .partial_cmp(&weights[a.index()])
            .unwrap()
            .then_with(|| a.as_str().cmp(b.as_str()))
    });
    topics.truncate(3);
    topics
}
