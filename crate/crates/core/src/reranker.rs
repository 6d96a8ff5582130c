//! Greedy calibrated top-k construction.
//!
//! At each step the candidate maximizing
//!
//! ```text
//! w·S(list ∪ {j}) − θ_t·KL(p_topic_user ‖ q̃_topic(list ∪ {j})) − θ_l·KL(p_loc_supply ‖ q̃_loc(list ∪ {j}))
//! ```
//!
//! is appended, where `S` sums base scores and `w` is the relevance weight.
//! Topic calibration (TC) drops the locality term; dual calibration (DC)
//! keeps both.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::{Article, Corpus, LocalityLabel, TopicLabel, UserProfile};
use crate::distributions::{
    kl_divergence, supply_locality_distribution, topic_distribution_from_history,
    LocalityDistribution, MassAccumulator, TopicDistribution, DEFAULT_ALPHA,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub article_id: String,
    pub base_score: f64,
}

impl ScoredCandidate {
    pub fn new(article_id: impl Into<String>, base_score: f64) -> Self {
        ScoredCandidate {
            article_id: article_id.into(),
            base_score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Topic calibration only.
    TC,
    /// Topic plus locality calibration.
    DC,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::TC => "TC",
            Mode::DC => "DC",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TC" | "tc" => Ok(Mode::TC),
            "DC" | "dc" => Ok(Mode::DC),
            other => Err(Error::parse("mode", format!("unknown mode `{other}`"))),
        }
    }
}

/// Relevance weight used in TC mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TcWeighting {
    /// `1 − θ_t`: TC is DC with `θ_l = 0`.
    #[default]
    ThetaTOnly,
    /// `1 − θ_l − θ_t` even though no locality term is applied.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub theta_t: f64,
    pub theta_l: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    pub mode: Mode,
    #[serde(default)]
    pub tc_weighting: TcWeighting,
    /// Permit `θ_t + θ_l > 1` (negative relevance weight).
    #[serde(default)]
    pub allow_infeasible: bool,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_k() -> usize {
    10
}

/// Production theta pair `(θ_t, θ_l)`.
pub const PRODUCTION_THETA_T: f64 = 0.25;
pub const PRODUCTION_THETA_L: f64 = 0.6;

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            theta_t: PRODUCTION_THETA_T,
            theta_l: PRODUCTION_THETA_L,
            alpha: DEFAULT_ALPHA,
            k: 10,
            mode: Mode::DC,
            tc_weighting: TcWeighting::ThetaTOnly,
            allow_infeasible: false,
        }
    }
}

impl CalibrationConfig {
    pub fn dc(theta_t: f64, theta_l: f64) -> Self {
        CalibrationConfig {
            theta_t,
            theta_l,
            ..Default::default()
        }
    }

    pub fn tc(theta_t: f64) -> Self {
        CalibrationConfig {
            theta_t,
            theta_l: 0.0,
            mode: Mode::TC,
            ..Default::default()
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("theta_t", self.theta_t), ("theta_l", self.theta_l)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !self.allow_infeasible && self.theta_t + self.theta_l > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "theta_t + theta_l = {} exceeds 1",
                self.theta_t + self.theta_l
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn relevance_weight(&self) -> f64 {
        match (self.mode, self.tc_weighting) {
            (Mode::TC, TcWeighting::ThetaTOnly) => 1.0 - self.theta_t,
            _ => 1.0 - self.theta_l - self.theta_t,
        }
    }

    /// Weight on the locality term; zero in TC mode.
    pub fn locality_weight(&self) -> f64 {
        match self.mode {
            Mode::TC => 0.0,
            Mode::DC => self.theta_l,
        }
    }
}

/// Reference distributions the newsletter is calibrated towards.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTargets {
    /// p(t|u), from the reader's click history.
    pub user_topics: TopicDistribution,
    /// p(l), from today's supply.
    pub supply_locality: LocalityDistribution,
}

impl CalibrationTargets {
    /// Targets for `user` on the day whose supply is `supply`. With `before`
    /// set only clicks strictly before that date feed the topic target.
    pub fn for_user(
        user: &UserProfile,
        corpus: &Corpus,
        supply: &[&Article],
        before: Option<NaiveDate>,
    ) -> Result<Self> {
        Ok(CalibrationTargets {
            user_topics: topic_distribution_from_history(
                user.history_articles(corpus, before),
                &user.onboarding_topics,
            ),
            supply_locality: supply_locality_distribution(supply)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub article_id: String,
    pub rank: usize,
    pub base_score: f64,
    pub marginal_objective_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedNewsletter {
    pub date: NaiveDate,
    pub user_id: String,
    pub mode: Mode,
    pub slots: Vec<Slot>,
}

impl RankedNewsletter {
    pub fn article_ids(&self) -> Vec<&str> {
        self.slots.iter().map(|s| s.article_id.as_str()).collect()
    }
}

/// Objective of a tentative list given its running aggregates.
fn objective(
    score_sum: f64,
    topics: &MassAccumulator<TopicLabel>,
    locality: &MassAccumulator<LocalityLabel>,
    targets: &CalibrationTargets,
    config: &CalibrationConfig,
) -> Result<f64> {
    let topic_kl = kl_divergence(&targets.user_topics, &topics.distribution(), config.alpha)?;
    let mut value = config.relevance_weight() * score_sum - config.theta_t * topic_kl;
    if config.mode == Mode::DC {
        let loc_kl = kl_divergence(&targets.supply_locality, &locality.distribution(), config.alpha)?;
        value -= config.locality_weight() * loc_kl;
    }
    Ok(value)
}

/// Objective value of `list ∪ {candidate}`; each entry pairs an article with
/// its base score.
pub fn marginal_objective(
    list: &[(&Article, f64)],
    candidate: (&Article, f64),
    targets: &CalibrationTargets,
    config: &CalibrationConfig,
) -> Result<f64> {
    if list.iter().any(|(a, _)| a.article_id == candidate.0.article_id) {
        return Err(Error::DuplicateCandidate(candidate.0.article_id.clone()));
    }
    let mut topics = MassAccumulator::default();
    let mut locality = MassAccumulator::default();
    let mut score_sum = 0.0;
    for &(a, s) in list.iter().chain(std::iter::once(&candidate)) {
        topics.add(a);
        locality.add(a);
        score_sum += s;
    }
    objective(score_sum, &topics, &locality, targets, config)
}

/// Total order used to pick the step winner: objective, then base score,
/// then the lexicographically smaller id.
fn better(a: (f64, f64, &str), b: (f64, f64, &str)) -> bool {
    match a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => a.2 < b.2,
        },
    }
}

/// Builds a calibrated newsletter of `min(k, |candidates|)` slots.
pub fn rerank(
    user_id: &str,
    date: NaiveDate,
    candidates: &[ScoredCandidate],
    targets: &CalibrationTargets,
    lookup: &Corpus,
    config: &CalibrationConfig,
) -> Result<RankedNewsletter> {
    config.validate()?;
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    let mut seen = HashSet::new();
    let mut pool: Vec<(&Article, f64)> = Vec::with_capacity(candidates.len());
    for c in candidates {
        if !c.base_score.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "candidate `{}` has non-finite score",
                c.article_id
            )));
        }
        if !seen.insert(c.article_id.as_str()) {
            return Err(Error::DuplicateCandidate(c.article_id.clone()));
        }
        pool.push((lookup.require(&c.article_id)?, c.base_score));
    }

    let target_len = config.k.min(pool.len());
    let mut topics = MassAccumulator::<TopicLabel>::default();
    let mut locality = MassAccumulator::<LocalityLabel>::default();
    let mut score_sum = 0.0;
    let mut slots = Vec::with_capacity(target_len);

    while slots.len() < target_len {
        let mut best: Option<(usize, f64)> = None;
        for (i, &(article, score)) in pool.iter().enumerate() {
            let mut t = topics.clone();
            t.add(article);
            let mut l = locality.clone();
            l.add(article);
            let value = objective(score_sum + score, &t, &l, targets, config)?;
            let take = match best {
                None => true,
                Some((j, v)) => better(
                    (value, score, &article.article_id),
                    (v, pool[j].1, &pool[j].0.article_id),
                ),
            };
            if take {
                best = Some((i, value));
            }
        }
        let (idx, value) = best.expect("pool is non-empty while slots remain");
        let (article, score) = pool.swap_remove(idx);
        topics.add(article);
        locality.add(article);
        score_sum += score;
        slots.push(Slot {
            article_id: article.article_id.clone(),
            rank: slots.len() + 1,
            base_score: score,
            marginal_objective_value: value,
        });
    }

    Ok(RankedNewsletter {
        date,
        user_id: user_id.to_string(),
        mode: config.mode,
        slots,
    })
}
