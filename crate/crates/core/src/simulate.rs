//! Daily newsletter pipeline and a synthetic reader population to drive it.

use chrono::{Duration, NaiveDate, NaiveTime, TimeZone, Utc};
use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Article, Click, ClickRecord, Corpus, LocalityLabel, TopicLabel, UserProfile};
use crate::distributions::{article_mass, Label};
use crate::error::{Error, Result};
use crate::preview::{
    choose_strategy, rewrite_newsletter, select_rewrite_set, top3_topics, Embedder, LlmClient, RewriteJob,
    RewriteLimits, Strategy, TopicBlend, DEFAULT_THETA_SIM, TEMPLATE_VERSION,
};
use crate::reranker::{rerank, CalibrationConfig, CalibrationTargets, RankedNewsletter, PRODUCTION_THETA_T};
use crate::runlog::{
    Assignment, DayFailure, Group, Manifest, NewsletterRecord, RewriteAudit, RunLog, SupplyRecord, UserRecord,
    RUNLOG_SCHEMA,
};
use crate::scoring::ScoreSource;

/// Which clicks feed the topic calibration target p(t|u).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicTarget {
    /// Recomputed each day from all clicks before that day.
    #[default]
    Daily,
    /// Fixed at the run start: only clicks before the first run day count.
    Frozen,
}

/// Calibration settings for the two ranking arms. DC-NP ranks with `dc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Treatments {
    pub tc: CalibrationConfig,
    pub dc: CalibrationConfig,
    #[serde(default)]
    pub topic_target: TopicTarget,
}

impl Default for Treatments {
    fn default() -> Self {
        Treatments {
            tc: CalibrationConfig::tc(PRODUCTION_THETA_T),
            dc: CalibrationConfig::default(),
            topic_target: TopicTarget::Daily,
        }
    }
}

impl Treatments {
    pub fn validate(&self) -> Result<()> {
        self.tc.validate()?;
        self.dc.validate()
    }

    pub fn config(&self, group: Group) -> &CalibrationConfig {
        match group {
            Group::TC => &self.tc,
            Group::DC | Group::DcNp => &self.dc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreviewSettings {
    pub theta_sim: f64,
    #[serde(default)]
    pub limits: RewriteLimits,
    #[serde(default)]
    pub blend: TopicBlend,
}

impl Default for PreviewSettings {
    fn default() -> Self {
        PreviewSettings {
            theta_sim: DEFAULT_THETA_SIM,
            limits: RewriteLimits::default(),
            blend: TopicBlend::default(),
        }
    }
}

/// Shared inputs of one run's daily loop.
pub struct DayPipeline<'a> {
    pub corpus: &'a Corpus,
    pub scores: &'a ScoreSource,
    pub treatments: &'a Treatments,
    pub preview: &'a PreviewSettings,
    pub client: &'a dyn LlmClient,
    pub embedder: &'a dyn Embedder,
    /// First run day; the cutoff for [`TopicTarget::Frozen`].
    pub run_start: NaiveDate,
}

/// What one reader received on one day.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDay {
    pub newsletter: RankedNewsletter,
    /// Rewrite audit rows in rank order; empty outside DC-NP.
    pub rewrites: Vec<RewriteAudit>,
}

impl UserDay {
    pub fn records(&self, group: Group) -> Vec<NewsletterRecord> {
        self.newsletter
            .slots
            .iter()
            .map(|s| NewsletterRecord {
                date: self.newsletter.date,
                user_id: self.newsletter.user_id.clone(),
                mode: self.newsletter.mode,
                group,
                rank: s.rank,
                article_id: s.article_id.clone(),
                base_score: s.base_score,
                marginal_objective_value: s.marginal_objective_value,
            })
            .collect()
    }

    pub fn rewritten(&self, article_id: &str) -> bool {
        self.rewrites.iter().any(|r| r.accepted && r.article_id == article_id)
    }
}

impl DayPipeline<'_> {
    /// Ranks today's supply for `user` and, for DC-NP, rewrites the articles
    /// the DC list adds over the TC list. Only history before `date` is used.
    pub fn run_user_day(&self, user: &UserProfile, group: Group, date: NaiveDate, supply: &[&Article]) -> Result<UserDay> {
        if supply.is_empty() {
            return Err(Error::Empty("daily supply"));
        }
        let candidates = self.scores.score(user, self.corpus, supply, date);
        let cutoff = match self.treatments.topic_target {
            TopicTarget::Daily => date,
            TopicTarget::Frozen => self.run_start.min(date),
        };
        let targets = CalibrationTargets::for_user(user, self.corpus, supply, Some(cutoff))?;
        let config = self.treatments.config(group);
        let newsletter = rerank(&user.user_id, date, &candidates, &targets, self.corpus, config)?;
        if group != Group::DcNp {
            return Ok(UserDay {
                newsletter,
                rewrites: Vec::new(),
            });
        }

        let tc = rerank(&user.user_id, date, &candidates, &targets, self.corpus, &self.treatments.tc)?;
        let rewrite_set = select_rewrite_set(&tc, &newsletter)?;
        let history = user.history_articles(self.corpus, Some(date));
        let topics = top3_topics(user, self.corpus, Some(date), self.preview.blend);
        let mut jobs = Vec::with_capacity(rewrite_set.len());
        for id in rewrite_set {
            let article = self.corpus.require(id)?;
            let (strategy, context) = match choose_strategy(article, &history, self.preview.theta_sim) {
                Ok(choice) => {
                    let ctx = match &choice.context {
                        Some((cid, _)) => Some(self.corpus.require(cid)?.clone()),
                        None => None,
                    };
                    (choice.strategy, ctx)
                }
                Err(e) => {
                    warn!("{id}: {e}; using the topic strategy");
                    (Strategy::Topic, None)
                }
            };
            jobs.push(RewriteJob {
                article: article.clone(),
                strategy,
                context,
                topics: topics.clone(),
            });
        }
        let results = rewrite_newsletter(&jobs, self.client, self.embedder, &self.preview.limits);
        let rewrites = results
            .into_iter()
            .map(|r| RewriteAudit {
                date,
                user_id: user.user_id.clone(),
                article_id: r.article_id,
                strategy: r.strategy,
                attempts: r.attempts,
                accepted: r.accepted,
                context_article_id: r.context_article_id,
                rejection_reasons: r.rejection_reasons,
                template_version: r.template_version,
                new_headline: r.accepted.then_some(r.new_headline),
                new_subhead: r.accepted.then_some(r.new_subhead),
            })
            .collect();
        Ok(UserDay { newsletter, rewrites })
    }
}

/// Logistic click model over position and persona match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickModel {
    pub b0: f64,
    /// Per slot below the top (rank 1 has position 0).
    pub b_pos: f64,
    pub b_topic: f64,
    pub b_loc: f64,
    /// Added when the preview was personalized.
    pub b_rewrite: f64,
}

impl Default for ClickModel {
    fn default() -> Self {
        ClickModel {
            b0: -3.0,
            b_pos: -0.1,
            b_topic: 2.0,
            b_loc: 1.5,
            b_rewrite: 0.3,
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ClickModel {
    pub fn probability(&self, position: usize, topic_match: f64, loc_match: f64, rewritten: bool) -> f64 {
        let mut z = self.b0 + self.b_pos * position as f64 + self.b_topic * topic_match + self.b_loc * loc_match;
        if rewritten {
            z += self.b_rewrite;
        }
        logistic(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalityShares {
    pub domestic: f64,
    pub world: f64,
    pub neither: f64,
}

impl Default for LocalityShares {
    fn default() -> Self {
        LocalityShares {
            domestic: 0.5,
            world: 0.25,
            neither: 0.25,
        }
    }
}

impl LocalityShares {
    fn as_array(&self) -> [f64; 3] {
        [self.domestic, self.world, self.neither]
    }
}

/// Relative weight of each component in synthetic article embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingWeights {
    pub topic: f64,
    pub locality: f64,
    pub story: f64,
    pub noise: f64,
}

impl Default for EmbeddingWeights {
    fn default() -> Self {
        EmbeddingWeights {
            topic: 0.35,
            locality: 0.25,
            story: 1.0,
            noise: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub users_per_group: usize,
    pub weeks: u32,
    pub start_date: NaiveDate,
    pub articles_per_day: usize,
    /// Days of articles published before the run, used for prior clicks.
    pub prior_days: u32,
    pub prior_clicks: usize,
    pub supply_shares: LocalityShares,
    /// Probability that a new article continues a recent story.
    pub story_continuation: f64,
    pub story_window_days: u32,
    pub embedding_dim: usize,
    pub embedding_weights: EmbeddingWeights,
    /// Preference mass on a reader's favored locality.
    pub locality_lean: f64,
    /// Share of readers favoring domestic news; the rest split evenly.
    pub domestic_leaning_share: f64,
    pub click_model: ClickModel,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            users_per_group: 40,
            weeks: 5,
            start_date: NaiveDate::from_ymd_opt(2025, 3, 3).expect("valid date"),
            articles_per_day: 60,
            prior_days: 28,
            prior_clicks: 24,
            supply_shares: LocalityShares::default(),
            story_continuation: 0.3,
            story_window_days: 7,
            embedding_dim: 48,
            embedding_weights: EmbeddingWeights::default(),
            locality_lean: 0.75,
            domestic_leaning_share: 0.7,
            click_model: ClickModel::default(),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.articles_per_day == 0 {
            return bad("articles_per_day must be positive".into());
        }
        if self.embedding_dim < 4 {
            return bad(format!("embedding_dim {} is below 4", self.embedding_dim));
        }
        let shares = self.supply_shares.as_array();
        if shares.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || (shares.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("supply shares {shares:?} must be non-negative and sum to 1"));
        }
        for (name, p) in [
            ("story_continuation", self.story_continuation),
            ("locality_lean", self.locality_lean),
            ("domestic_leaning_share", self.domestic_leaning_share),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1]"));
            }
        }
        let w = self.embedding_weights;
        if [w.topic, w.locality, w.story, w.noise].iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return bad("embedding weights must be non-negative".into());
        }
        let c = self.click_model;
        if [c.b0, c.b_pos, c.b_topic, c.b_loc, c.b_rewrite].iter().any(|x| !x.is_finite()) {
            return bad("click model coefficients must be finite".into());
        }
        Ok(())
    }

    pub fn run_dates(&self) -> Vec<NaiveDate> {
        (0..i64::from(self.weeks) * 7)
            .map(|d| self.start_date + Duration::days(d))
            .collect()
    }
}

/// A simulated reader's latent preferences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub user_id: String,
    pub topic_pref: [f64; 14],
    pub locality_pref: [f64; 3],
}

impl Persona {
    fn matches<L: Label>(pref: &[f64], article: &Article) -> f64 {
        let max = pref.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return 0.0;
        }
        let mass = article_mass::<L>(article);
        mass.masses().iter().zip(pref).map(|(m, p)| m * p).sum::<f64>() / max
    }

    /// Topic and locality match of `article`, each in `[0, 1]`.
    pub fn affinity(&self, article: &Article) -> (f64, f64) {
        (
            Self::matches::<TopicLabel>(&self.topic_pref, article),
            Self::matches::<LocalityLabel>(&self.locality_pref, article),
        )
    }
}

/// Generated corpus, readers, and group assignment.
#[derive(Debug, Clone)]
pub struct World {
    pub spec: ScenarioSpec,
    pub seed: u64,
    pub corpus: Corpus,
    pub users: Vec<UserProfile>,
    pub personas: Vec<Persona>,
    pub assignments: Vec<Assignment>,
}

/// Seeds an independent stream from the run seed and a path of indices.
pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    // splitmix64 over the path
    let mut h = seed;
    for &p in path {
        h = h.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(p);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn pick_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

const SECONDARY_DOMESTIC: [TopicLabel; 7] = [
    TopicLabel::Politics,
    TopicLabel::Business,
    TopicLabel::Health,
    TopicLabel::Education,
    TopicLabel::Climate,
    TopicLabel::Science,
    TopicLabel::Religion,
];
const SECONDARY_WORLD: [TopicLabel; 5] = [
    TopicLabel::Politics,
    TopicLabel::Business,
    TopicLabel::Climate,
    TopicLabel::Health,
    TopicLabel::Science,
];
const NEITHER_TOPICS: [TopicLabel; 9] = [
    TopicLabel::Entertainment,
    TopicLabel::Sports,
    TopicLabel::Lifestyle,
    TopicLabel::Oddities,
    TopicLabel::Technology,
    TopicLabel::Science,
    TopicLabel::Business,
    TopicLabel::Health,
    TopicLabel::Religion,
];

const SUBJECT_A: [&str; 24] = [
    "River", "Harbor", "County", "Airport", "Library", "Stadium", "Transit", "Border", "Rail", "School", "Port",
    "Hospital", "Museum", "Bridge", "Festival", "Market", "Coastal", "Mountain", "Prairie", "Valley", "Island",
    "Desert", "Forest", "Canal",
];
const SUBJECT_B: [&str; 24] = [
    "budget", "project", "strike", "merger", "lawsuit", "election", "recall", "expansion", "inquiry", "treaty",
    "rescue", "drought", "outbreak", "auction", "reform", "summit", "shortage", "rollout", "tournament", "verdict",
    "cleanup", "pilot", "review", "reopening",
];
const VERB: [&str; 20] = [
    "stalls after", "advances despite", "draws crowds before", "faces questions over", "wins approval after",
    "hits snag amid", "gains support ahead of", "slows following", "resumes after", "expands despite",
    "divides residents over", "tests officials during", "surprises analysts with", "clears hurdle in",
    "sparks debate over", "nears deadline with", "shifts course after", "returns amid", "reaches milestone in",
    "prompts review after",
];
const TAIL: [&str; 20] = [
    "late vote", "record turnout", "heavy rain", "new funding", "court ruling", "long delays", "rising costs",
    "public hearing", "fresh data", "weekend talks", "staff changes", "safety concerns", "budget cuts",
    "strong demand", "quiet protest", "final inspection", "surprise audit", "tight schedule", "early results",
    "holiday rush",
];
const DOMESTIC_PLACES: [&str; 12] = [
    "Ohio", "Texas", "Oregon", "Georgia", "Nevada", "Maine", "Iowa", "Utah", "Vermont", "Arizona", "Kansas",
    "Alabama",
];
const WORLD_PLACES: [&str; 12] = [
    "Lisbon", "Nairobi", "Seoul", "Lima", "Oslo", "Manila", "Cairo", "Quito", "Hanoi", "Dublin", "Accra", "Riga",
];

struct Story {
    started: i64,
    subject: String,
    locality: LocalityLabel,
    topics: Vec<TopicLabel>,
    vector: Vec<f64>,
}

struct Generator<'a> {
    spec: &'a ScenarioSpec,
    topic_vecs: Vec<Vec<f64>>,
    locality_vecs: Vec<Vec<f64>>,
    stories: Vec<Story>,
}

impl Generator<'_> {
    fn new_story(&self, rng: &mut ChaCha8Rng, day: i64) -> Story {
        let locality = LocalityLabel::ALL[pick_weighted(rng, &self.spec.supply_shares.as_array())];
        let mut topics = match locality {
            LocalityLabel::Domestic => vec![TopicLabel::UsNews],
            LocalityLabel::World => vec![TopicLabel::WorldNews],
            LocalityLabel::Neither => vec![*NEITHER_TOPICS.choose(rng).expect("non-empty")],
        };
        let secondary: &[TopicLabel] = match locality {
            LocalityLabel::Domestic => &SECONDARY_DOMESTIC,
            LocalityLabel::World => &SECONDARY_WORLD,
            LocalityLabel::Neither => &NEITHER_TOPICS,
        };
        let second_p = if locality == LocalityLabel::Neither { 0.3 } else { 0.7 };
        if rng.gen_bool(second_p) {
            let t = *secondary.choose(rng).expect("non-empty");
            if !topics.contains(&t) {
                topics.push(t);
            }
        }
        let subject = format!(
            "{} {}",
            SUBJECT_A.choose(rng).expect("non-empty"),
            SUBJECT_B.choose(rng).expect("non-empty")
        );
        Story {
            started: day,
            subject,
            locality,
            topics,
            vector: random_unit(rng, self.spec.embedding_dim),
        }
    }

    fn article(&mut self, rng: &mut ChaCha8Rng, day: i64, index: usize, date: NaiveDate) -> Article {
        let window = i64::from(self.spec.story_window_days);
        let recent: Vec<usize> = (0..self.stories.len())
            .filter(|&i| day - self.stories[i].started <= window && self.stories[i].started < day)
            .collect();
        let story_idx = if !recent.is_empty() && rng.gen_bool(self.spec.story_continuation) {
            *recent.choose(rng).expect("non-empty")
        } else {
            let s = self.new_story(rng, day);
            self.stories.push(s);
            self.stories.len() - 1
        };
        let story = &self.stories[story_idx];
        let place = match story.locality {
            LocalityLabel::Domestic => format!(" in {}", DOMESTIC_PLACES.choose(rng).expect("non-empty")),
            LocalityLabel::World => format!(" in {}", WORLD_PLACES.choose(rng).expect("non-empty")),
            LocalityLabel::Neither => String::new(),
        };
        let headline = format!(
            "{} {} {}{}",
            story.subject,
            VERB.choose(rng).expect("non-empty"),
            TAIL.choose(rng).expect("non-empty"),
            place
        );
        let subhead = format!(
            "Officials and residents weigh what the {} means for the weeks ahead",
            story.subject.to_lowercase()
        );
        let body = format!(
            "The {} moved forward on day {} of coverage{}. Reporters followed reactions through the afternoon.",
            story.subject.to_lowercase(),
            day - story.started + 1,
            place
        );

        let w = self.spec.embedding_weights;
        let dim = self.spec.embedding_dim;
        let noise = random_unit(rng, dim);
        let mut emb = vec![0.0; dim];
        for t in &story.topics {
            for (e, x) in emb.iter_mut().zip(&self.topic_vecs[t.index()]) {
                *e += w.topic * x / story.topics.len() as f64;
            }
        }
        for (i, e) in emb.iter_mut().enumerate() {
            *e += w.locality * self.locality_vecs[story.locality.index()][i] + w.story * story.vector[i] + w.noise * noise[i];
        }

        let mut tags: Vec<String> = story.topics.iter().map(|t| t.as_str().to_string()).collect();
        if story.locality == LocalityLabel::Domestic && rng.gen_bool(0.15) {
            tags.push("Washington news".into());
        }
        Article::new(format!("sim-{:03}-{:03}", day, index), date, headline, subhead, tags)
            .with_body(body)
            .with_embedding(emb)
    }
}

fn make_persona(rng: &mut ChaCha8Rng, spec: &ScenarioSpec, user_id: String) -> Persona {
    let favored = if rng.gen_bool(spec.domestic_leaning_share) {
        0
    } else if rng.gen_bool(0.5) {
        1
    } else {
        2
    };
    let mut locality_pref = [(1.0 - spec.locality_lean) / 2.0; 3];
    locality_pref[favored] = spec.locality_lean;

    // The news topics follow the locality lean rather than the random draw.
    let mut topics: Vec<TopicLabel> = TopicLabel::ALL
        .into_iter()
        .filter(|t| !matches!(t, TopicLabel::UsNews | TopicLabel::WorldNews))
        .collect();
    topics.shuffle(rng);
    let mut topic_pref = [0.0f64; 14];
    let weights = [0.5, 0.3, 0.2];
    for (t, w) in topics.iter().take(3).zip(weights) {
        topic_pref[t.index()] = w;
    }
    match favored {
        0 => topic_pref[TopicLabel::UsNews.index()] = 0.4,
        1 => topic_pref[TopicLabel::WorldNews.index()] = 0.4,
        _ => {}
    }
    Persona {
        user_id,
        topic_pref,
        locality_pref,
    }
}

fn click_time(date: NaiveDate, rank: usize) -> chrono::DateTime<Utc> {
    let t = NaiveTime::from_hms_opt(12, 0, 0).expect("valid time") + Duration::minutes(rank as i64);
    Utc.from_utc_datetime(&date.and_time(t))
}

impl World {
    /// Builds the synthetic corpus (prior days plus run days), personas with
    /// prior click histories, and a seeded equal-size group assignment.
    pub fn generate(spec: &ScenarioSpec, seed: u64) -> Result<World> {
        spec.validate()?;
        let mut rng = stream(seed, &[0]);
        let dim = spec.embedding_dim;
        let mut gen = Generator {
            spec,
            topic_vecs: (0..14).map(|_| random_unit(&mut rng, dim)).collect(),
            locality_vecs: (0..3).map(|_| random_unit(&mut rng, dim)).collect(),
            stories: Vec::new(),
        };
        let first = spec.start_date - Duration::days(i64::from(spec.prior_days));
        let total_days = i64::from(spec.prior_days) + i64::from(spec.weeks) * 7;
        let mut articles = Vec::new();
        for day in 0..total_days {
            let date = first + Duration::days(day);
            let mut day_rng = stream(seed, &[1, day as u64]);
            for i in 0..spec.articles_per_day {
                articles.push(gen.article(&mut day_rng, day, i, date));
            }
        }
        let corpus = Corpus::from_articles(articles)?;

        let n_users = spec.users_per_group * 3;
        let prior: Vec<&Article> = corpus.articles().iter().filter(|a| a.published_date < spec.start_date).collect();
        let mut users = Vec::with_capacity(n_users);
        let mut personas = Vec::with_capacity(n_users);
        for u in 0..n_users {
            let mut urng = stream(seed, &[2, u as u64]);
            let persona = make_persona(&mut urng, spec, format!("u{:03}", u + 1));
            let mut onboarding: Vec<TopicLabel> = TopicLabel::ALL
                .into_iter()
                .filter(|t| persona.topic_pref[t.index()] > 0.0)
                .collect();
            onboarding.sort_by(|a, b| {
                persona.topic_pref[b.index()]
                    .total_cmp(&persona.topic_pref[a.index()])
                    .then(a.cmp(b))
            });
            let mut user = UserProfile::new(persona.user_id.clone(), onboarding);
            if !prior.is_empty() && spec.prior_clicks > 0 {
                let picked = prior
                    .choose_multiple_weighted(&mut urng, spec.prior_clicks.min(prior.len()), |a| {
                        let (t, l) = persona.affinity(a);
                        spec.click_model.probability(0, t, l, false)
                    })
                    .map_err(|e| Error::Config(format!("prior click sampling: {e}")))?;
                let mut picked: Vec<&&Article> = picked.collect();
                picked.sort_by(|a, b| (a.published_date, &a.article_id).cmp(&(b.published_date, &b.article_id)));
                for (i, a) in picked.into_iter().enumerate() {
                    user.record_click(a.article_id.clone(), click_time(a.published_date, i % 60));
                }
            }
            users.push(user);
            personas.push(persona);
        }

        let mut order: Vec<usize> = (0..n_users).collect();
        order.shuffle(&mut stream(seed, &[3]));
        let mut assignments: Vec<Assignment> = order
            .iter()
            .enumerate()
            .map(|(slot, &u)| Assignment {
                user_id: users[u].user_id.clone(),
                group: Group::ALL[slot * 3 / n_users.max(1)],
            })
            .collect();
        assignments.sort_by(|a, b| a.user_id.cmp(&b.user_id));

        Ok(World {
            spec: *spec,
            seed,
            corpus,
            users,
            personas,
            assignments,
        })
    }
}

impl World {
    /// The same readers and corpus with every reader assigned to `group`.
    pub fn counterfactual(&self, group: Group) -> World {
        let mut w = self.clone();
        for a in &mut w.assignments {
            a.group = group;
        }
        w
    }
}

/// Runs the daily loop over the world's run dates: rank per group, rewrite
/// for DC-NP, sample clicks from the personas, extend histories. A failing
/// reader-day is recorded and skipped.
pub fn simulate_users(
    world: &World,
    treatments: &Treatments,
    preview: &PreviewSettings,
    client: &dyn LlmClient,
    embedder: &dyn Embedder,
    config_text: &str,
) -> Result<RunLog> {
    treatments.validate()?;
    world.spec.validate()?;
    let scores = ScoreSource::Embedding;
    let pipeline = DayPipeline {
        corpus: &world.corpus,
        scores: &scores,
        treatments,
        preview,
        client,
        embedder,
        run_start: world.spec.start_date,
    };
    let groups: Vec<Group> = world
        .users
        .iter()
        .map(|u| {
            world
                .assignments
                .iter()
                .find(|a| a.user_id == u.user_id)
                .map(|a| a.group)
                .ok_or_else(|| Error::UnknownUser(u.user_id.clone()))
        })
        .collect::<Result<_>>()?;
    let initial: Vec<UserRecord> = world.users.iter().map(UserRecord::from).collect();
    let mut users = world.users.clone();
    let model = world.spec.click_model;

    let dates = world.spec.run_dates();
    let mut supply_log = Vec::new();
    let mut newsletters = Vec::new();
    let mut clicks = Vec::new();
    let mut rewrites = Vec::new();
    let mut failures = Vec::new();

    for (day_idx, &date) in dates.iter().enumerate() {
        let supply = world.corpus.published_on(date);
        supply_log.push(SupplyRecord {
            date,
            article_ids: supply.iter().map(|a| a.article_id.clone()).collect(),
        });
        let outcomes: Vec<Result<(UserDay, Vec<Click>)>> = users
            .par_iter()
            .enumerate()
            .map(|(u, user)| {
                let day = pipeline.run_user_day(user, groups[u], date, &supply)?;
                let mut rng = stream(world.seed, &[4, day_idx as u64, u as u64]);
                let mut picked = Vec::new();
                for (pos, slot) in day.newsletter.slots.iter().enumerate() {
                    let article = world.corpus.require(&slot.article_id)?;
                    let (t, l) = world.personas[u].affinity(article);
                    let p = model.probability(pos, t, l, day.rewritten(&slot.article_id));
                    if rng.gen_bool(p.clamp(0.0, 1.0)) {
                        picked.push(Click {
                            article_id: slot.article_id.clone(),
                            clicked_at: click_time(date, slot.rank),
                        });
                    }
                }
                Ok((day, picked))
            })
            .collect();
        for (u, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok((day, picked)) => {
                    newsletters.extend(day.records(groups[u]));
                    rewrites.extend(day.rewrites);
                    for c in picked {
                        clicks.push(ClickRecord {
                            user_id: users[u].user_id.clone(),
                            article_id: c.article_id.clone(),
                            clicked_at: c.clicked_at,
                        });
                        users[u].record_click(c.article_id, c.clicked_at);
                    }
                }
                Err(e) => failures.push(DayFailure {
                    date,
                    user_id: users[u].user_id.clone(),
                    error: e.to_string(),
                }),
            }
        }
    }

    Ok(RunLog {
        manifest: Manifest {
            schema: RUNLOG_SCHEMA.to_string(),
            created_at: None,
            seed: world.seed,
            run_mode: "simulate".into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            template_version: TEMPLATE_VERSION.into(),
            days: dates,
            complete: failures.is_empty(),
            failures,
        },
        config: config_text.to_string(),
        corpus: world.corpus.clone(),
        users: initial,
        assignments: world.assignments.clone(),
        supply: supply_log,
        newsletters,
        clicks,
        rewrites,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preview::{HashEmbedder, MockClient};

    fn small() -> ScenarioSpec {
        ScenarioSpec {
            users_per_group: 3,
            weeks: 1,
            articles_per_day: 20,
            prior_days: 7,
            prior_clicks: 8,
            ..ScenarioSpec::default()
        }
    }

    fn run(spec: &ScenarioSpec, seed: u64) -> RunLog {
        let world = World::generate(spec, seed).unwrap();
        simulate_users(&world, &Treatments::default(), &PreviewSettings::default(), &MockClient, &HashEmbedder::default(), "")
            .unwrap()
    }

    #[test]
    fn zero_weeks_is_empty() {
        let log = run(&ScenarioSpec { weeks: 0, ..small() }, 1);
        assert!(log.newsletters.is_empty());
        assert!(log.clicks.is_empty());
        assert!(log.manifest.days.is_empty());
    }

    #[test]
    fn groups_are_equal_sized() {
        let world = World::generate(&small(), 3).unwrap();
        for g in Group::ALL {
            assert_eq!(world.assignments.iter().filter(|a| a.group == g).count(), 3);
        }
    }

    #[test]
    fn generated_labels_follow_tags() {
        let world = World::generate(&small(), 5).unwrap();
        for a in world.corpus.articles() {
            let l = a.locality();
            assert_eq!(l.is_domestic(), a.topics().contains(&TopicLabel::UsNews));
            assert_eq!(l.is_world(), a.topics().contains(&TopicLabel::WorldNews));
        }
    }

    #[test]
    fn deterministic_and_total() {
        let a = run(&small(), 11);
        let b = run(&small(), 11);
        assert_eq!(a.newsletters, b.newsletters);
        assert_eq!(a.clicks, b.clicks);
        assert_eq!(a.rewrites, b.rewrites);
        assert!(a.manifest.complete);
        assert_eq!(a.newsletters.len(), 9 * 7 * 10);
    }

    #[test]
    fn frozen_topic_target_matches_daily_on_first_day_only() {
        let world = World::generate(&small(), 13).unwrap();
        let go = |topic_target| {
            let t = Treatments { topic_target, ..Treatments::default() };
            simulate_users(&world, &t, &PreviewSettings::default(), &MockClient, &HashEmbedder::default(), "").unwrap()
        };
        let daily = go(TopicTarget::Daily);
        let frozen = go(TopicTarget::Frozen);
        let first = world.spec.start_date;
        let on = |log: &RunLog, first_day: bool| -> Vec<NewsletterRecord> {
            log.newsletters.iter().filter(|n| (n.date == first) == first_day).cloned().collect()
        };
        assert_eq!(on(&daily, true), on(&frozen, true));
        assert_ne!(on(&daily, false), on(&frozen, false));
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = ScenarioSpec {
            supply_shares: LocalityShares { domestic: 0.5, world: 0.5, neither: 0.5 },
            ..small()
        };
        assert!(World::generate(&spec, 0).is_err());
    }

    #[test]
    fn logistic_baseline() {
        let m = ClickModel { b0: -1.0, b_pos: 0.0, b_topic: 0.0, b_loc: 0.0, b_rewrite: 0.0 };
        assert!((m.probability(7, 1.0, 1.0, false) - logistic(-1.0)).abs() < 1e-15);
    }
}
