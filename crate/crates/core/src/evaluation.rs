//! Response variables and click-model features of a run.
//!
//! Divergences here take the supply distribution as the reference (first
//! argument) and the reader's exposure or consumption as the target; the
//! calibration objective instead keeps the reader's click history first.

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::NaiveDate;
use serde::Serialize;

use crate::corpus::{Article, LocalityLabel, TopicLabel};
use crate::distributions::{cosine, kl_divergence_raw, Axis, Label, MassAccumulator};
use crate::error::{Error, Result};
use crate::preview::Strategy;
use crate::runlog::{applied_strategy, Group, RunLog};

/// nDCG@k with binary click relevance and `1/log2(rank+1)` discount.
pub fn ndcg_at_k<S: AsRef<str>>(ranked: &[S], clicked: &HashSet<String>, k: usize) -> f64 {
    if clicked.is_empty() || k == 0 {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| clicked.contains(id.as_ref()))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..clicked.len().min(k))
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum();
    dcg / ideal
}

/// Reference distribution used for evaluation divergences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupplyWindow {
    /// All supply published during the run.
    Experiment,
    /// Supply of the newsletter's own date.
    PerDay,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergencePoint {
    /// 1-based newsletter index.
    pub index: usize,
    pub date: NaiveDate,
    pub exposure: f64,
    /// `None` until the reader's first click.
    pub consumption: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceSeries {
    pub user_id: String,
    pub group: Group,
    pub axis: Axis,
    pub points: Vec<DivergencePoint>,
}

impl DivergenceSeries {
    pub fn last(&self) -> Option<&DivergencePoint> {
        self.points.last()
    }

    /// Entry for the last newsletter on or before `date`.
    pub fn at_or_before(&self, date: NaiveDate) -> Option<&DivergencePoint> {
        self.points.iter().rev().find(|p| p.date <= date)
    }
}

fn series_for<L: Label>(
    run: &RunLog,
    user_id: &str,
    group: Group,
    axis: Axis,
    window: SupplyWindow,
    alpha: f64,
) -> Result<DivergenceSeries> {
    let experiment_ref = match window {
        SupplyWindow::Experiment => Some(
            run.supply_articles(None)
                .into_iter()
                .collect::<MassAccumulator<L>>()
                .distribution(),
        ),
        SupplyWindow::PerDay => None,
    };
    let mut clicks_by_date: BTreeMap<NaiveDate, Vec<&str>> = BTreeMap::new();
    for c in run.clicks.iter().filter(|c| c.user_id == user_id) {
        clicks_by_date
            .entry(c.clicked_at.date_naive())
            .or_default()
            .push(c.article_id.as_str());
    }

    let mut exposure = MassAccumulator::<L>::default();
    let mut consumption = MassAccumulator::<L>::default();
    let mut shown: HashSet<&str> = HashSet::new();
    let mut consumed: HashSet<&str> = HashSet::new();
    let mut points = Vec::new();
    for (j, (date, slots)) in run.newsletters_of(user_id).into_iter().enumerate() {
        for slot in &slots {
            let article = run.corpus.require(&slot.article_id)?;
            exposure.add(article);
            shown.insert(slot.article_id.as_str());
        }
        // Clicks dated up to this newsletter on anything shown so far.
        for (_, ids) in clicks_by_date.range(..=date) {
            for id in ids {
                if shown.contains(id) && consumed.insert(id) {
                    consumption.add(run.corpus.require(id)?);
                }
            }
        }
        let reference = match &experiment_ref {
            Some(r) => r.clone(),
            None => run
                .supply_articles(Some(date))
                .into_iter()
                .collect::<MassAccumulator<L>>()
                .distribution(),
        };
        let exposure_kl = kl_divergence_raw(reference.masses(), exposure.distribution().masses(), alpha)?;
        let consumption_kl = if consumption.contributors() > 0 {
            Some(kl_divergence_raw(reference.masses(), consumption.distribution().masses(), alpha)?)
        } else {
            None
        };
        points.push(DivergencePoint {
            index: j + 1,
            date,
            exposure: exposure_kl,
            consumption: consumption_kl,
        });
    }
    Ok(DivergenceSeries {
        user_id: user_id.to_string(),
        group,
        axis,
        points,
    })
}

/// Cumulative exposure and consumption divergence from supply, one entry per
/// newsletter of `user_id`.
pub fn divergence_series(
    run: &RunLog,
    user_id: &str,
    axis: Axis,
    window: SupplyWindow,
    alpha: f64,
) -> Result<DivergenceSeries> {
    let group = run
        .group_of(user_id)
        .ok_or_else(|| Error::UnknownUser(user_id.to_string()))?;
    match axis {
        Axis::Topic => series_for::<TopicLabel>(run, user_id, group, axis, window, alpha),
        Axis::Locality => series_for::<LocalityLabel>(run, user_id, group, axis, window, alpha),
    }
}

pub fn all_divergence_series(
    run: &RunLog,
    axis: Axis,
    window: SupplyWindow,
    alpha: f64,
) -> Result<Vec<DivergenceSeries>> {
    run.assignments
        .iter()
        .map(|a| divergence_series(run, &a.user_id, axis, window, alpha))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClickFeatureRow {
    pub user_id: String,
    pub article_id: String,
    pub date: NaiveDate,
    pub clicked: bool,
    pub position: usize,
    pub week: i64,
    pub prior_topic_interest: Option<f64>,
    pub prior_locality_interest: Option<f64>,
    pub group: Group,
    /// Set for DC-NP rows only.
    pub prompt_level: Option<Strategy>,
}

fn interest<L: Label>(article: &Article, history: &MassAccumulator<L>) -> Option<f64> {
    if history.contributors() == 0 {
        return None;
    }
    let labels = L::of_article(article);
    if labels.is_empty() {
        return None;
    }
    let mut v = vec![0.0; L::COUNT];
    for l in &labels {
        v[l.index()] = 1.0 / labels.len() as f64;
    }
    cosine(&v, history.sums())
}

/// One row per recommended slot. Prior-interest features only see clicks
/// dated strictly before the newsletter date; no z-scoring is applied.
pub fn click_feature_table(run: &RunLog) -> Result<Vec<ClickFeatureRow>> {
    let first = match run.first_date() {
        Some(d) => d,
        None => return Ok(Vec::new()),
    };
    let audits: HashMap<(NaiveDate, &str, &str), _> = run
        .rewrites
        .iter()
        .map(|a| ((a.date, a.user_id.as_str(), a.article_id.as_str()), a))
        .collect();
    let clicked_same_day: HashSet<(&str, &str, NaiveDate)> = run
        .clicks
        .iter()
        .map(|c| (c.user_id.as_str(), c.article_id.as_str(), c.clicked_at.date_naive()))
        .collect();

    let mut rows = Vec::new();
    for assignment in &run.assignments {
        let user_id = assignment.user_id.as_str();
        let mut history: Vec<(NaiveDate, &Article)> = Vec::new();
        if let Some(u) = run.users.iter().find(|u| u.user_id == user_id) {
            for c in &u.prior_clicks {
                if let Some(a) = run.corpus.get(&c.article_id) {
                    history.push((c.clicked_at.date_naive(), a));
                }
            }
        }
        for c in run.clicks.iter().filter(|c| c.user_id == user_id) {
            if let Some(a) = run.corpus.get(&c.article_id) {
                history.push((c.clicked_at.date_naive(), a));
            }
        }
        history.sort_by_key(|(d, _)| *d);

        let mut topic_acc = MassAccumulator::<TopicLabel>::default();
        let mut loc_acc = MassAccumulator::<LocalityLabel>::default();
        let mut cursor = 0;
        for (date, slots) in run.newsletters_of(user_id) {
            while cursor < history.len() && history[cursor].0 < date {
                topic_acc.add(history[cursor].1);
                loc_acc.add(history[cursor].1);
                cursor += 1;
            }
            for slot in slots {
                let article = run.corpus.require(&slot.article_id)?;
                let prompt_level = (assignment.group == Group::DcNp).then(|| {
                    applied_strategy(audits.get(&(date, user_id, slot.article_id.as_str())).copied())
                });
                rows.push(ClickFeatureRow {
                    user_id: user_id.to_string(),
                    article_id: slot.article_id.clone(),
                    date,
                    clicked: clicked_same_day.contains(&(user_id, slot.article_id.as_str(), date)),
                    position: slot.rank,
                    week: (date - first).num_days().div_euclid(7) + 1,
                    prior_topic_interest: interest(article, &topic_acc),
                    prior_locality_interest: interest(article, &loc_acc),
                    group: assignment.group,
                    prompt_level,
                });
            }
        }
    }
    Ok(rows)
}
