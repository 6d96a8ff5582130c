//! Article and reader ingestion.
//!
//! Articles arrive as newline-delimited JSON records carrying AP-style subject
//! tags. Topic labels and locality membership are derived from those tags at
//! ingest and never change afterwards.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 14 high-level topics used for topic calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TopicLabel {
    #[serde(rename = "U.S. news")]
    UsNews,
    #[serde(rename = "World news")]
    WorldNews,
    Politics,
    Business,
    Entertainment,
    Sports,
    Health,
    Science,
    Technology,
    Lifestyle,
    Religion,
    #[serde(rename = "Climate and environment")]
    Climate,
    Education,
    Oddities,
}

impl TopicLabel {
    pub const ALL: [TopicLabel; 14] = [
        TopicLabel::UsNews,
        TopicLabel::WorldNews,
        TopicLabel::Politics,
        TopicLabel::Business,
        TopicLabel::Entertainment,
        TopicLabel::Sports,
        TopicLabel::Health,
        TopicLabel::Science,
        TopicLabel::Technology,
        TopicLabel::Lifestyle,
        TopicLabel::Religion,
        TopicLabel::Climate,
        TopicLabel::Education,
        TopicLabel::Oddities,
    ];

    /// Canonical AP tag string.
    pub fn as_str(self) -> &'static str {
        match self {
            TopicLabel::UsNews => "U.S. news",
            TopicLabel::WorldNews => "World news",
            TopicLabel::Politics => "Politics",
            TopicLabel::Business => "Business",
            TopicLabel::Entertainment => "Entertainment",
            TopicLabel::Sports => "Sports",
            TopicLabel::Health => "Health",
            TopicLabel::Science => "Science",
            TopicLabel::Technology => "Technology",
            TopicLabel::Lifestyle => "Lifestyle",
            TopicLabel::Religion => "Religion",
            TopicLabel::Climate => "Climate and environment",
            TopicLabel::Education => "Education",
            TopicLabel::Oddities => "Oddities",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Exact match against the canonical tag after trimming.
    pub fn from_tag(tag: &str) -> Option<TopicLabel> {
        let tag = tag.trim();
        TopicLabel::ALL.into_iter().find(|t| t.as_str() == tag)
    }
}

impl fmt::Display for TopicLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TopicLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TopicLabel::from_tag(s).ok_or_else(|| Error::parse("topic label", format!("unknown topic `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LocalityLabel {
    Domestic,
    World,
    Neither,
}

impl LocalityLabel {
    pub const ALL: [LocalityLabel; 3] = [
        LocalityLabel::Domestic,
        LocalityLabel::World,
        LocalityLabel::Neither,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LocalityLabel::Domestic => "Domestic",
            LocalityLabel::World => "World",
            LocalityLabel::Neither => "Neither",
        }
    }
}

impl fmt::Display for LocalityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Derived locality membership of one article.
///
/// Only two flags are stored; `Neither` is implied when both are unset, so a
/// set mixing `Neither` with another label cannot be represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LocalitySet {
    domestic: bool,
    world: bool,
}

impl LocalitySet {
    pub const NEITHER: LocalitySet = LocalitySet {
        domestic: false,
        world: false,
    };

    pub fn new(domestic: bool, world: bool) -> Self {
        LocalitySet { domestic, world }
    }

    pub fn is_domestic(&self) -> bool {
        self.domestic
    }

    pub fn is_world(&self) -> bool {
        self.world
    }

    pub fn is_neither(&self) -> bool {
        !self.domestic && !self.world
    }

    pub fn contains(&self, label: LocalityLabel) -> bool {
        match label {
            LocalityLabel::Domestic => self.domestic,
            LocalityLabel::World => self.world,
            LocalityLabel::Neither => self.is_neither(),
        }
    }

    pub fn labels(&self) -> Vec<LocalityLabel> {
        LocalityLabel::ALL
            .into_iter()
            .filter(|l| self.contains(*l))
            .collect()
    }
}

pub const DOMESTIC_TAGS: [&str; 2] = ["U.S. news", "Washington news"];
pub const WORLD_TAG: &str = "World news";

/// Domestic iff a consolidated U.S./Washington tag is present, World iff the
/// world tag is present, Neither otherwise.
pub fn derive_locality<S: AsRef<str>>(subject_tags: &[S]) -> LocalitySet {
    let mut set = LocalitySet::NEITHER;
    for tag in subject_tags {
        let tag = tag.as_ref().trim();
        if DOMESTIC_TAGS.contains(&tag) {
            set.domestic = true;
        }
        if tag == WORLD_TAG {
            set.world = true;
        }
    }
    set
}

/// Intersection of the tags with the topic taxonomy, in taxonomy order.
pub fn derive_topics<S: AsRef<str>>(subject_tags: &[S]) -> Vec<TopicLabel> {
    let found: BTreeSet<TopicLabel> = subject_tags
        .iter()
        .filter_map(|t| TopicLabel::from_tag(t.as_ref()))
        .collect();
    found.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub article_id: String,
    pub published_date: NaiveDate,
    pub headline: String,
    pub subhead: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    pub subject_tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(skip)]
    topics: Vec<TopicLabel>,
    #[serde(skip)]
    locality: LocalitySet,
}

impl Article {
    pub fn new(
        article_id: impl Into<String>,
        published_date: NaiveDate,
        headline: impl Into<String>,
        subhead: impl Into<String>,
        subject_tags: Vec<String>,
    ) -> Self {
        let mut article = Article {
            article_id: article_id.into(),
            published_date,
            headline: headline.into(),
            subhead: subhead.into(),
            body: None,
            subject_tags,
            embedding: None,
            topics: Vec::new(),
            locality: LocalitySet::NEITHER,
        };
        article.refresh_labels();
        article
    }

    pub fn with_body(mut self, body: impl Into<String>) -> Self {
        self.body = Some(body.into());
        self
    }

    pub fn with_embedding(mut self, embedding: Vec<f64>) -> Self {
        self.embedding = Some(embedding);
        self
    }

    /// Canonicalizes tags (trim, dedupe, sort) and re-derives labels.
    pub fn refresh_labels(&mut self) {
        let tags: BTreeSet<String> = self
            .subject_tags
            .iter()
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty())
            .collect();
        self.subject_tags = tags.into_iter().collect();
        self.topics = derive_topics(&self.subject_tags);
        self.locality = derive_locality(&self.subject_tags);
    }

    pub fn topics(&self) -> &[TopicLabel] {
        &self.topics
    }

    pub fn locality(&self) -> LocalitySet {
        self.locality
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusFormat {
    /// One JSON object per line.
    #[serde(rename = "ndjson")]
    Ndjson,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ndjson" | "jsonl" => Ok(CorpusFormat::Ndjson),
            other => Err(Error::parse("corpus format", format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Quarantined {
    pub line: usize,
    pub article_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub quarantined: Vec<Quarantined>,
}

/// Immutable article collection keyed by id.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    articles: Vec<Article>,
    index: HashMap<String, usize>,
    embedding_dim: Option<usize>,
}

impl Corpus {
    /// Builds a corpus from already-validated articles. Later duplicates are
    /// rejected.
    pub fn from_articles(articles: impl IntoIterator<Item = Article>) -> Result<Self> {
        let mut corpus = Corpus::default();
        for article in articles {
            corpus.insert(article)?;
        }
        Ok(corpus)
    }

    fn insert(&mut self, mut article: Article) -> Result<()> {
        article.refresh_labels();
        if self.index.contains_key(&article.article_id) {
            return Err(Error::InvalidArgument(format!(
                "duplicate article_id `{}`",
                article.article_id
            )));
        }
        if let Some(embedding) = &article.embedding {
            match self.embedding_dim {
                Some(dim) if dim != embedding.len() => {
                    return Err(Error::InvalidArgument(format!(
                        "embedding dimension {} differs from corpus dimension {dim}",
                        embedding.len()
                    )))
                }
                None => self.embedding_dim = Some(embedding.len()),
                _ => {}
            }
        }
        self.index.insert(article.article_id.clone(), self.articles.len());
        self.articles.push(article);
        Ok(())
    }

    pub fn get(&self, article_id: &str) -> Option<&Article> {
        self.index.get(article_id).map(|&i| &self.articles[i])
    }

    pub fn require(&self, article_id: &str) -> Result<&Article> {
        self.get(article_id)
            .ok_or_else(|| Error::UnknownArticle(article_id.to_string()))
    }

    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embedding_dim
    }

    /// Today's supply: articles published on `date`, in corpus order.
    pub fn published_on(&self, date: NaiveDate) -> Vec<&Article> {
        self.articles
            .iter()
            .filter(|a| a.published_date == date)
            .collect()
    }

    pub fn dates(&self) -> BTreeSet<NaiveDate> {
        self.articles.iter().map(|a| a.published_date).collect()
    }

    pub fn summary(&self) -> CorpusSummary {
        let mut summary = CorpusSummary {
            articles: self.articles.len(),
            embedding_dim: self.embedding_dim,
            ..CorpusSummary::default()
        };
        for article in &self.articles {
            let loc = article.locality();
            let key = match (loc.is_domestic(), loc.is_world()) {
                (true, true) => "Domestic+World",
                (true, false) => "Domestic",
                (false, true) => "World",
                (false, false) => "Neither",
            };
            *summary.locality.entry(key.to_string()).or_default() += 1;
            for topic in article.topics() {
                *summary.topics.entry(topic.to_string()).or_default() += 1;
            }
            if article.topics().is_empty() {
                summary.without_topic += 1;
            }
            *summary
                .per_date
                .entry(article.published_date.to_string())
                .or_default() += 1;
        }
        summary
    }
}

/// Deterministic corpus digest; ordered maps keep the serialization stable.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusSummary {
    pub articles: usize,
    pub embedding_dim: Option<usize>,
    pub locality: BTreeMap<String, usize>,
    pub topics: BTreeMap<String, usize>,
    pub without_topic: usize,
    pub per_date: BTreeMap<String, usize>,
}

/// Reads a corpus file. Record-level problems are collected in the report;
/// only an unreadable file is fatal.
pub fn ingest_corpus(path: &Path, format: CorpusFormat) -> Result<(Corpus, IngestReport)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(ingest_str(&text, format))
}

pub fn ingest_str(text: &str, format: CorpusFormat) -> (Corpus, IngestReport) {
    let CorpusFormat::Ndjson = format;
    let mut corpus = Corpus::default();
    let mut report = IngestReport::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut article: Article = match serde_json::from_str(line) {
            Ok(a) => a,
            Err(e) => {
                report.quarantined.push(Quarantined {
                    line: line_no,
                    article_id: None,
                    reason: format!("malformed record: {e}"),
                });
                continue;
            }
        };
        article.refresh_labels();
        if article.subject_tags.is_empty() {
            report.quarantined.push(Quarantined {
                line: line_no,
                article_id: Some(article.article_id),
                reason: "no subject tags".to_string(),
            });
            continue;
        }
        let id = article.article_id.clone();
        if let Err(e) = corpus.insert(article) {
            report.quarantined.push(Quarantined {
                line: line_no,
                article_id: Some(id),
                reason: e.to_string(),
            });
            continue;
        }
        report.accepted += 1;
    }
    (corpus, report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Click {
    pub article_id: String,
    pub clicked_at: DateTime<Utc>,
}

/// Click-history file record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub user_id: String,
    pub article_id: String,
    pub clicked_at: DateTime<Utc>,
}

/// User-profile file record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub user_id: String,
    #[serde(default)]
    pub onboarding_topics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub click_history: Vec<Click>,
    pub onboarding_topics: Vec<TopicLabel>,
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>, onboarding_topics: Vec<TopicLabel>) -> Self {
        UserProfile {
            user_id: user_id.into(),
            click_history: Vec::new(),
            onboarding_topics,
        }
    }

    /// Appends a click, keeping the history time-ordered.
    pub fn record_click(&mut self, article_id: impl Into<String>, clicked_at: DateTime<Utc>) {
        let click = Click {
            article_id: article_id.into(),
            clicked_at,
        };
        let pos = self
            .click_history
            .partition_point(|c| c.clicked_at <= click.clicked_at);
        self.click_history.insert(pos, click);
    }

    /// Clicks strictly before the start of `date` (UTC).
    pub fn clicks_before(&self, date: NaiveDate) -> &[Click] {
        let end = self
            .click_history
            .partition_point(|c| c.clicked_at.date_naive() < date);
        &self.click_history[..end]
    }

    /// Clicked articles resolvable in `corpus`; unknown ids are skipped.
    pub fn history_articles<'a>(&self, corpus: &'a Corpus, before: Option<NaiveDate>) -> Vec<&'a Article> {
        let clicks = match before {
            Some(date) => self.clicks_before(date),
            None => &self.click_history,
        };
        clicks
            .iter()
            .filter_map(|c| {
                let found = corpus.get(&c.article_id);
                if found.is_none() {
                    log::warn!("user {}: unknown clicked article {}", self.user_id, c.article_id);
                }
                found
            })
            .collect()
    }
}

pub(crate) fn read_ndjson<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e))?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_click_records(path: &Path) -> Result<Vec<ClickRecord>> {
    read_ndjson(path)
}

pub fn read_profile_records(path: &Path) -> Result<Vec<ProfileRecord>> {
    read_ndjson(path)
}

/// Joins profile and click records into users. Clicks on unknown articles
/// and unknown onboarding topics are dropped with a warning; users that only
/// appear in the click file get empty onboarding lists.
pub fn build_users(
    profiles: &[ProfileRecord],
    clicks: &[ClickRecord],
    corpus: &Corpus,
) -> Vec<UserProfile> {
    let mut users: BTreeMap<String, UserProfile> = BTreeMap::new();
    for record in profiles {
        let topics = record
            .onboarding_topics
            .iter()
            .filter_map(|t| match TopicLabel::from_tag(t) {
                Some(topic) => Some(topic),
                None => {
                    log::warn!("user {}: unknown onboarding topic `{t}`", record.user_id);
                    None
                }
            })
            .collect();
        users.insert(record.user_id.clone(), UserProfile::new(record.user_id.clone(), topics));
    }
    for click in clicks {
        if corpus.get(&click.article_id).is_none() {
            log::warn!("user {}: dropping click on unknown article {}", click.user_id, click.article_id);
            continue;
        }
        users
            .entry(click.user_id.clone())
            .or_insert_with(|| UserProfile::new(click.user_id.clone(), Vec::new()))
            .record_click(click.article_id.clone(), click.clicked_at);
    }
    users.into_values().collect()
}

pub fn load_users(profiles: Option<&Path>, clicks: Option<&Path>, corpus: &Corpus) -> Result<Vec<UserProfile>> {
    let profiles = match profiles {
        Some(p) => read_profile_records(p)?,
        None => Vec::new(),
    };
    let clicks = match clicks {
        Some(p) => read_click_records(p)?,
        None => Vec::new(),
    };
    Ok(build_users(&profiles, &clicks, corpus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tags(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn locality_examples() {
        let loc = derive_locality(&tags(&["U.S. news", "Politics"]));
        assert_eq!(loc.labels(), vec![LocalityLabel::Domestic]);
        let loc = derive_locality(&tags(&["Washington news", "World news"]));
        assert_eq!(loc.labels(), vec![LocalityLabel::Domestic, LocalityLabel::World]);
        let loc = derive_locality(&tags(&["Oddities"]));
        assert_eq!(loc.labels(), vec![LocalityLabel::Neither]);
    }

    #[test]
    fn locality_is_case_sensitive_but_trims() {
        assert!(derive_locality(&tags(&["  U.S. news "])).is_domestic());
        assert!(derive_locality(&tags(&["u.s. news"])).is_neither());
    }

    #[test]
    fn topic_examples() {
        assert_eq!(
            derive_topics(&tags(&["Sports", "U.S. news"])),
            vec![TopicLabel::UsNews, TopicLabel::Sports]
        );
        assert!(derive_topics(&tags(&["Quantum Widgets"])).is_empty());
        // Washington news is a locality tag only.
        assert!(derive_topics(&tags(&["Washington news"])).is_empty());
    }

    #[test]
    fn topic_label_round_trips_through_serde() {
        for t in TopicLabel::ALL {
            let json = serde_json::to_string(&t).unwrap();
            assert_eq!(json, format!("\"{}\"", t.as_str()));
            assert_eq!(serde_json::from_str::<TopicLabel>(&json).unwrap(), t);
        }
    }

    const LINE_A: &str = r#"{"article_id":"a","published_date":"2025-03-01","headline":"h","subhead":"s","subject_tags":["Sports"]}"#;
    const LINE_B: &str = r#"{"article_id":"b","published_date":"2025-03-01","headline":"h","subhead":"s","subject_tags":["World news"]}"#;
    const LINE_C: &str = r#"{"article_id":"c","published_date":"2025-03-02","headline":"h","subhead":"s","subject_tags":["U.S. news","Politics"]}"#;
    const LINE_TAGLESS: &str = r#"{"article_id":"d","published_date":"2025-03-02","headline":"h","subhead":"s","subject_tags":[]}"#;

    #[test]
    fn ingest_quarantines_tagless() {
        let text = [LINE_A, LINE_B, LINE_TAGLESS, LINE_C].join("\n");
        let (corpus, report) = ingest_str(&text, CorpusFormat::Ndjson);
        assert_eq!(corpus.len(), 3);
        assert_eq!(report.quarantined.len(), 1);
        assert_eq!(report.quarantined[0].article_id.as_deref(), Some("d"));
        assert_eq!(report.quarantined[0].line, 3);
    }

    #[test]
    fn ingest_empty_file() {
        let (corpus, report) = ingest_str("", CorpusFormat::Ndjson);
        assert!(corpus.is_empty());
        assert!(report.quarantined.is_empty());
    }

    #[test]
    fn ingest_rejects_later_duplicates_and_malformed() {
        let dup = LINE_A.replace("Sports", "Health");
        let text = [LINE_A, "{not json", dup.as_str()].join("\n");
        let (corpus, report) = ingest_str(&text, CorpusFormat::Ndjson);
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.get("a").unwrap().topics(), &[TopicLabel::Sports]);
        assert_eq!(report.quarantined.len(), 2);
        assert!(report.quarantined[0].reason.starts_with("malformed"));
        assert!(report.quarantined[1].reason.contains("duplicate"));
    }

    #[test]
    fn ingest_checks_embedding_dimension() {
        let a = r#"{"article_id":"a","published_date":"2025-03-01","headline":"h","subhead":"s","subject_tags":["Sports"],"embedding":[1,0]}"#;
        let b = r#"{"article_id":"b","published_date":"2025-03-01","headline":"h","subhead":"s","subject_tags":["Sports"],"embedding":[1,0,0]}"#;
        let (corpus, report) = ingest_str(&format!("{a}\n{b}"), CorpusFormat::Ndjson);
        assert_eq!(corpus.embedding_dim(), Some(2));
        assert_eq!(corpus.len(), 1);
        assert_eq!(report.quarantined.len(), 1);
    }

    #[test]
    fn ingest_unreadable_file_is_fatal() {
        let err = ingest_corpus(Path::new("/definitely/not/here.jsonl"), CorpusFormat::Ndjson);
        assert!(matches!(err, Err(Error::Io { .. })));
    }

    #[test]
    fn click_history_stays_ordered_and_filters_by_date() {
        let mut user = UserProfile::new("u", vec![]);
        let t = |d: u32| {
            NaiveDate::from_ymd_opt(2025, 3, d)
                .unwrap()
                .and_hms_opt(9, 0, 0)
                .unwrap()
                .and_utc()
        };
        user.record_click("b", t(3));
        user.record_click("a", t(1));
        user.record_click("c", t(2));
        let ids: Vec<_> = user.click_history.iter().map(|c| c.article_id.as_str()).collect();
        assert_eq!(ids, ["a", "c", "b"]);
        assert_eq!(user.clicks_before(NaiveDate::from_ymd_opt(2025, 3, 3).unwrap()).len(), 2);
    }

    #[test]
    fn build_users_drops_unknown_references() {
        let (corpus, _) = ingest_str(&[LINE_A, LINE_B].join("\n"), CorpusFormat::Ndjson);
        let at = "2025-03-01T10:00:00Z".parse().unwrap();
        let clicks = vec![
            ClickRecord { user_id: "u1".into(), article_id: "a".into(), clicked_at: at },
            ClickRecord { user_id: "u1".into(), article_id: "zzz".into(), clicked_at: at },
        ];
        let profiles = vec![ProfileRecord {
            user_id: "u1".into(),
            onboarding_topics: vec!["Health".into(), "Nonsense".into()],
        }];
        let users = build_users(&profiles, &clicks, &corpus);
        assert_eq!(users.len(), 1);
        assert_eq!(users[0].click_history.len(), 1);
        assert_eq!(users[0].onboarding_topics, vec![TopicLabel::Health]);
    }

    proptest! {
        #[test]
        fn domestic_iff_consolidated_tag(picks in proptest::collection::vec(0usize..8, 0..6)) {
            let pool = ["U.S. news", "Washington news", "World news", "Sports", "Politics", "Oddities", "us news", "Health"];
            let tags: Vec<String> = picks.iter().map(|&i| pool[i].to_string()).collect();
            let loc = derive_locality(&tags);
            let has_dom = tags.iter().any(|t| t == "U.S. news" || t == "Washington news");
            let has_world = tags.iter().any(|t| t == "World news");
            prop_assert_eq!(loc.is_domestic(), has_dom);
            prop_assert_eq!(loc.is_world(), has_world);
            prop_assert_eq!(loc.is_neither(), !has_dom && !has_world);
            let labels = loc.labels();
            prop_assert!(!labels.is_empty());
            prop_assert!(!(labels.contains(&LocalityLabel::Neither) && labels.len() > 1));
        }
    }
}
