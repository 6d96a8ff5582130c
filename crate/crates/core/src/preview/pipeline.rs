use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checks::{check_article_level, check_newsletter_level, ArticleCheckConfig, Rejection};
use super::embed::Embedder;
use super::llm::{GenerationParams, LlmClient, LlmError, LlmRequest};
use super::prompt::{build_prompt, Prompt, TEMPLATE_VERSION};
use super::rouge::rouge_l;
use super::{choose_strategy, RewriteResult, Strategy};
use crate::corpus::{Article, TopicLabel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewriteLimits {
    /// Initial attempt plus reprompts.
    pub max_attempts: u32,
    /// Wall-clock budget for one newsletter's rewrites.
    pub latency_budget_secs: f64,
    /// Accepted headlines must stay below this cosine with each other.
    pub dedup_threshold: f64,
    #[serde(default)]
    pub checks: ArticleCheckConfig,
    #[serde(default)]
    pub params: GenerationParams,
}

impl Default for RewriteLimits {
    fn default() -> Self {
        RewriteLimits {
            max_attempts: 3,
            latency_budget_secs: 25.0,
            dedup_threshold: 0.85,
            checks: ArticleCheckConfig::default(),
            params: GenerationParams::default(),
        }
    }
}

impl RewriteLimits {
    fn budget(&self) -> Duration {
        Duration::from_secs_f64(self.latency_budget_secs.max(0.0))
    }
}

/// Everything needed to rewrite one article.
#[derive(Debug, Clone, PartialEq)]
pub struct RewriteJob {
    pub article: Article,
    pub strategy: Strategy,
    pub context: Option<Article>,
    pub topics: Vec<TopicLabel>,
}

struct Session<'a> {
    job: &'a RewriteJob,
    prompt: Option<Prompt>,
    attempts: u32,
    feedback: Vec<String>,
    reasons: Vec<String>,
    warnings: Vec<String>,
    candidate: Option<(String, String)>,
    /// Set once no further attempt can be made.
    closed: bool,
    deadline: Instant,
}

impl<'a> Session<'a> {
    fn new(job: &'a RewriteJob, deadline: Instant) -> Self {
        let mut session = Session {
            job,
            prompt: None,
            attempts: 0,
            feedback: Vec::new(),
            reasons: Vec::new(),
            warnings: Vec::new(),
            candidate: None,
            closed: false,
            deadline,
        };
        match build_prompt(&job.article, job.strategy, job.context.as_ref(), Some(&job.topics)) {
            Ok(p) => session.prompt = Some(p),
            Err(e) => {
                session.reasons.push(Rejection::MissingInput(e.to_string()).to_string());
                session.closed = true;
            }
        }
        session
    }

    fn reject(&mut self, rejection: Rejection, limits: &RewriteLimits) {
        let fb = rejection.feedback(&limits.checks);
        if !fb.is_empty() && !self.feedback.contains(&fb) {
            self.feedback.push(fb);
        }
        if !rejection.is_retryable() {
            self.closed = true;
        }
        self.reasons.push(rejection.to_string());
    }

    fn call(&self, client: &dyn LlmClient, limits: &RewriteLimits) -> Result<String, LlmError> {
        let prompt = self.prompt.as_ref().expect("open session has a prompt").with_feedback(&self.feedback);
        let request = LlmRequest {
            system: prompt.system,
            user: prompt.user,
            params: limits.params,
        };
        match client.complete(&request) {
            Err(LlmError::Transport(_)) => client.complete(&request),
            other => other,
        }
    }

    /// Generates until an answer passes the article-level checks and the
    /// newsletter-level check against `admitted`, or the session closes.
    fn run(
        &mut self,
        client: &dyn LlmClient,
        embedder: &dyn Embedder,
        admitted: &[(String, Vec<f64>)],
        limits: &RewriteLimits,
    ) -> bool {
        self.candidate = None;
        while !self.closed && self.attempts < limits.max_attempts {
            if Instant::now() > self.deadline {
                self.reject(Rejection::BudgetExceeded, limits);
                break;
            }
            self.attempts += 1;
            let text = match self.call(client, limits) {
                Ok(t) => t,
                Err(LlmError::Transport(m)) => {
                    self.reject(Rejection::Transport(m), limits);
                    break;
                }
                Err(LlmError::Malformed(_)) => {
                    self.reject(Rejection::Unparseable, limits);
                    continue;
                }
            };
            let outcome = check_article_level(&text, &self.job.article, self.job.context.as_ref(), &limits.checks);
            for w in &outcome.warnings {
                if !self.warnings.contains(w) {
                    self.warnings.push(w.clone());
                }
            }
            if !outcome.passed() {
                for r in outcome.rejections {
                    self.reject(r, limits);
                }
                continue;
            }
            let (headline, subhead) = outcome.parsed.expect("passed outcome is parsed");
            if let Some(r) = check_newsletter_level(&embedder.embed(&headline), admitted, limits.dedup_threshold) {
                self.reject(r, limits);
                continue;
            }
            self.candidate = Some((headline, subhead));
            return true;
        }
        if self.attempts >= limits.max_attempts {
            self.closed = true;
        }
        false
    }

    /// Records that the current candidate collided with an admitted headline.
    fn bounce(&mut self, rejection: Rejection, limits: &RewriteLimits) {
        self.candidate = None;
        self.reject(rejection, limits);
    }

    fn finish(self) -> RewriteResult {
        let accepted = self.candidate.is_some();
        let (new_headline, new_subhead) = match self.candidate {
            Some(c) => c,
            None => (self.job.article.headline.clone(), self.job.article.subhead.clone()),
        };
        RewriteResult {
            article_id: self.job.article.article_id.clone(),
            strategy: self.job.strategy,
            new_headline,
            new_subhead,
            attempts: self.attempts,
            context_article_id: self.job.context.as_ref().map(|c| c.article_id.clone()),
            accepted,
            rejection_reasons: self.reasons,
            warnings: self.warnings,
            template_version: TEMPLATE_VERSION.to_string(),
        }
    }
}

/// Rewrites one article, reprompting with feedback until the article-level
/// checks and the diversity check against `accepted` pass. An unaccepted
/// result carries the original headline and subhead as the fallback.
pub fn rewrite_with_feedback(
    job: &RewriteJob,
    client: &dyn LlmClient,
    embedder: &dyn Embedder,
    accepted: &[RewriteResult],
    limits: &RewriteLimits,
) -> RewriteResult {
    let admitted: Vec<(String, Vec<f64>)> = accepted
        .iter()
        .filter(|r| r.accepted)
        .map(|r| (r.article_id.clone(), embedder.embed(&r.new_headline)))
        .collect();
    let mut session = Session::new(job, Instant::now() + limits.budget());
    session.run(client, embedder, &admitted, limits);
    session.finish()
}

/// Rewrites a newsletter's rewrite set. Generation runs in parallel; the
/// headline diversity check then admits results one at a time in the order
/// of `jobs` (DC rank order), reprompting any that collide.
pub fn rewrite_newsletter(
    jobs: &[RewriteJob],
    client: &dyn LlmClient,
    embedder: &dyn Embedder,
    limits: &RewriteLimits,
) -> Vec<RewriteResult> {
    let deadline = Instant::now() + limits.budget();
    let mut sessions: Vec<Session<'_>> = jobs
        .par_iter()
        .map(|job| {
            let mut s = Session::new(job, deadline);
            s.run(client, embedder, &[], limits);
            s
        })
        .collect();

    let mut admitted: Vec<(String, Vec<f64>)> = Vec::new();
    for session in &mut sessions {
        while let Some((headline, _)) = &session.candidate {
            let emb = embedder.embed(headline);
            match check_newsletter_level(&emb, &admitted, limits.dedup_threshold) {
                None => {
                    admitted.push((session.job.article.article_id.clone(), emb));
                    break;
                }
                Some(r) => {
                    session.bounce(r, limits);
                    if !session.run(client, embedder, &admitted, limits) {
                        break;
                    }
                }
            }
        }
    }
    sessions.into_iter().map(Session::finish).collect()
}

/// One (article, reader history) pair for threshold tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPair {
    pub article: Article,
    pub history: Vec<Article>,
    pub topics: Vec<TopicLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub theta_sim: f64,
    pub pairs: usize,
    pub event_count: usize,
    pub event_rate: f64,
    pub rewritten: usize,
    /// Mean ROUGE-L F1 of accepted rewrites against the original preview.
    pub mean_rouge_l: Option<f64>,
    /// Same, restricted to event-based rewrites.
    pub mean_rouge_l_event: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Event-gating rate and rewrite fidelity for each similarity threshold.
pub fn threshold_sweep(
    pairs: &[SweepPair],
    client: &dyn LlmClient,
    embedder: &dyn Embedder,
    thetas: &[f64],
    limits: &RewriteLimits,
) -> Vec<SweepRow> {
    thetas
        .iter()
        .map(|&theta| {
            let outcomes: Vec<Option<(Strategy, f64)>> = pairs
                .par_iter()
                .map(|pair| {
                    let history: Vec<&Article> = pair.history.iter().collect();
                    let choice = choose_strategy(&pair.article, &history, theta).ok()?;
                    let context = choice
                        .context
                        .as_ref()
                        .and_then(|(id, _)| pair.history.iter().find(|h| &h.article_id == id).cloned());
                    let topics = if pair.topics.is_empty() {
                        pair.article.topics().to_vec()
                    } else {
                        pair.topics.clone()
                    };
                    let job = RewriteJob {
                        article: pair.article.clone(),
                        strategy: choice.strategy,
                        context,
                        topics,
                    };
                    let result = rewrite_with_feedback(&job, client, embedder, &[], limits);
                    let f1 = if result.accepted {
                        let new = format!("{} {}", result.new_headline, result.new_subhead);
                        let old = format!("{} {}", pair.article.headline, pair.article.subhead);
                        rouge_l(&new, &old).f1
                    } else {
                        f64::NAN
                    };
                    Some((choice.strategy, f1))
                })
                .collect();
            let event_count = outcomes
                .iter()
                .filter(|o| matches!(o, Some((Strategy::Event, _))))
                .count();
            let scores: Vec<f64> = outcomes.iter().flatten().map(|(_, f)| *f).filter(|f| !f.is_nan()).collect();
            let event_scores: Vec<f64> = outcomes
                .iter()
                .flatten()
                .filter(|(s, _)| *s == Strategy::Event)
                .map(|(_, f)| *f)
                .filter(|f| !f.is_nan())
                .collect();
            SweepRow {
                theta_sim: theta,
                pairs: pairs.len(),
                event_count,
                event_rate: if pairs.is_empty() { 0.0 } else { event_count as f64 / pairs.len() as f64 },
                rewritten: scores.len(),
                mean_rouge_l: mean(&scores),
                mean_rouge_l_event: mean(&event_scores),
            }
        })
        .collect()
}
