//! On-disk record of a simulated or replayed experiment.
//!
//! A run directory holds one newline-delimited JSON file per record kind plus
//! a manifest. Files are written once and never rewritten; apart from the
//! manifest's `created_at` every byte is a function of config and seed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{Article, ClickRecord, Corpus, TopicLabel, UserProfile};
use crate::error::{Error, Result};
use crate::preview::Strategy;
use crate::reranker::Mode;

pub const RUNLOG_SCHEMA: &str = "dualcal.runlog/v1";

/// Treatment group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    TC,
    DC,
    #[serde(rename = "DC-NP")]
    DcNp,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::TC, Group::DC, Group::DcNp];

    /// Ranking mode used to build this group's newsletters.
    pub fn mode(self) -> Mode {
        match self {
            Group::TC => Mode::TC,
            Group::DC | Group::DcNp => Mode::DC,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Group::TC => "TC",
            Group::DC => "DC",
            Group::DcNp => "DC-NP",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TC" => Ok(Group::TC),
            "DC" => Ok(Group::DC),
            "DC-NP" => Ok(Group::DcNp),
            other => Err(Error::parse("group", format!("unknown treatment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub user_id: String,
    pub group: Group,
}

/// One newsletter slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsletterRecord {
    pub date: NaiveDate,
    pub user_id: String,
    pub mode: Mode,
    pub group: Group,
    pub rank: usize,
    pub article_id: String,
    pub base_score: f64,
    pub marginal_objective_value: f64,
}

/// One rewrite audit row; rows cover exactly the rewrite set of each DC-NP
/// user-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteAudit {
    pub date: NaiveDate,
    pub user_id: String,
    pub article_id: String,
    pub strategy: Strategy,
    pub attempts: u32,
    pub accepted: bool,
    pub context_article_id: Option<String>,
    pub rejection_reasons: Vec<String>,
    pub template_version: String,
    pub new_headline: Option<String>,
    pub new_subhead: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplyRecord {
    pub date: NaiveDate,
    pub article_ids: Vec<String>,
}

/// Reader state at the start of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub onboarding_topics: Vec<TopicLabel>,
    pub prior_clicks: Vec<crate::corpus::Click>,
}

impl From<&UserProfile> for UserRecord {
    fn from(u: &UserProfile) -> Self {
        UserRecord {
            user_id: u.user_id.clone(),
            onboarding_topics: u.onboarding_topics.clone(),
            prior_clicks: u.click_history.clone(),
        }
    }
}

impl From<&UserRecord> for UserProfile {
    fn from(r: &UserRecord) -> Self {
        UserProfile {
            user_id: r.user_id.clone(),
            click_history: r.prior_clicks.clone(),
            onboarding_topics: r.onboarding_topics.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayFailure {
    pub date: NaiveDate,
    pub user_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub created_at: Option<DateTime<Utc>>,
    pub seed: u64,
    pub run_mode: String,
    pub crate_version: String,
    pub template_version: String,
    pub days: Vec<NaiveDate>,
    pub failures: Vec<DayFailure>,
    pub complete: bool,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub manifest: Manifest,
    /// Config text the run was started with.
    pub config: String,
    pub corpus: Corpus,
    pub users: Vec<UserRecord>,
    pub assignments: Vec<Assignment>,
    pub supply: Vec<SupplyRecord>,
    pub newsletters: Vec<NewsletterRecord>,
    pub clicks: Vec<ClickRecord>,
    pub rewrites: Vec<RewriteAudit>,
}

const FILES: [&str; 8] = [
    "articles.jsonl",
    "users.jsonl",
    "assignments.jsonl",
    "supply.jsonl",
    "newsletters.jsonl",
    "clicks.jsonl",
    "rewrites.jsonl",
    "config.toml",
];

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e)))
        .collect()
}

impl RunLog {
    pub fn group_of(&self, user_id: &str) -> Option<Group> {
        self.assignments
            .iter()
            .find(|a| a.user_id == user_id)
            .map(|a| a.group)
    }

    pub fn groups(&self) -> BTreeMap<String, Group> {
        self.assignments
            .iter()
            .map(|a| (a.user_id.clone(), a.group))
            .collect()
    }

    /// Newsletter slots per (date, user), each sorted by rank, in date order.
    pub fn newsletters_of(&self, user_id: &str) -> Vec<(NaiveDate, Vec<&NewsletterRecord>)> {
        let mut by_date: BTreeMap<NaiveDate, Vec<&NewsletterRecord>> = BTreeMap::new();
        for r in self.newsletters.iter().filter(|r| r.user_id == user_id) {
            by_date.entry(r.date).or_default().push(r);
        }
        by_date
            .into_iter()
            .map(|(d, mut v)| {
                v.sort_by_key(|r| r.rank);
                (d, v)
            })
            .collect()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.newsletters.iter().map(|r| r.date).min()
    }

    pub fn supply_articles(&self, date: Option<NaiveDate>) -> Vec<&Article> {
        self.supply
            .iter()
            .filter(|s| date.is_none_or(|d| s.date == d))
            .flat_map(|s| s.article_ids.iter())
            .filter_map(|id| self.corpus.get(id))
            .collect()
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join("articles.jsonl"), self.corpus.articles())?;
        write_jsonl(&dir.join("users.jsonl"), &self.users)?;
        write_jsonl(&dir.join("assignments.jsonl"), &self.assignments)?;
        write_jsonl(&dir.join("supply.jsonl"), &self.supply)?;
        write_jsonl(&dir.join("newsletters.jsonl"), &self.newsletters)?;
        write_jsonl(&dir.join("clicks.jsonl"), &self.clicks)?;
        write_jsonl(&dir.join("rewrites.jsonl"), &self.rewrites)?;
        let cfg = dir.join("config.toml");
        fs::write(&cfg, &self.config).map_err(|e| Error::io(&cfg, e))?;
        let seed = dir.join("seed.txt");
        fs::write(&seed, format!("{}\n", self.manifest.seed)).map_err(|e| Error::io(&seed, e))?;
        let manifest = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&manifest, text + "\n").map_err(|e| Error::io(&manifest, e))
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.schema != RUNLOG_SCHEMA {
            return Err(Error::parse("manifest", format!("unsupported schema `{}`", manifest.schema)));
        }
        let articles: Vec<Article> = read_jsonl(&dir.join("articles.jsonl"))?;
        let cfg_path = dir.join("config.toml");
        Ok(RunLog {
            config: fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?,
            corpus: Corpus::from_articles(articles)?,
            users: read_jsonl(&dir.join("users.jsonl"))?,
            assignments: read_jsonl(&dir.join("assignments.jsonl"))?,
            supply: read_jsonl(&dir.join("supply.jsonl"))?,
            newsletters: read_jsonl(&dir.join("newsletters.jsonl"))?,
            clicks: read_jsonl(&dir.join("clicks.jsonl"))?,
            rewrites: read_jsonl(&dir.join("rewrites.jsonl"))?,
            manifest,
        })
    }

    /// Files whose bytes are fully determined by config and seed.
    pub fn deterministic_files() -> &'static [&'static str] {
        &FILES
    }
}

/// Strategy applied to a slot for accounting: the audit's strategy when the
/// rewrite was accepted, `None` otherwise.
pub fn applied_strategy(audit: Option<&RewriteAudit>) -> Strategy {
    match audit {
        Some(a) if a.accepted => a.strategy,
        _ => Strategy::None,
    }
}
