//! Random search over the calibration weight pair `(θ_t, θ_l)`.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Article, Corpus, LocalityLabel, TopicLabel, UserProfile};
use crate::distributions::{kl_divergence, newsletter_distribution};
use crate::error::{Error, Result};
use crate::evaluation::ndcg_at_k;
use crate::reranker::{rerank, CalibrationConfig, CalibrationTargets, Mode, ScoredCandidate};
use crate::scoring::ScoreSource;

/// Grid steps per axis; axis values are `i / STEPS` for `i` in `0..=STEPS`.
pub const STEPS: u8 = 20;
pub const DEFAULT_SAMPLE_COUNT: usize = 60;

/// A grid point, stored as axis indices so equality is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ThetaPair {
    pub t: u8,
    pub l: u8,
}

impl ThetaPair {
    pub fn new(t: u8, l: u8) -> Self {
        assert!(t <= STEPS && l <= STEPS, "grid index out of range");
        ThetaPair { t, l }
    }

    pub fn theta_t(self) -> f64 {
        f64::from(self.t) / f64::from(STEPS)
    }

    pub fn theta_l(self) -> f64 {
        f64::from(self.l) / f64::from(STEPS)
    }

    pub fn is_feasible(self) -> bool {
        self.t + self.l <= STEPS
    }
}

/// Probability that `n` uniform draws hit the top 5% at least once.
pub fn coverage_probability(n: usize) -> f64 {
    1.0 - 0.95f64.powi(n as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThetaGrid {
    pub sample_count: usize,
    pub seed: u64,
    /// Also sample pairs with `θ_t + θ_l > 1`.
    pub include_infeasible: bool,
}

impl Default for ThetaGrid {
    fn default() -> Self {
        ThetaGrid {
            sample_count: DEFAULT_SAMPLE_COUNT,
            seed: 0,
            include_infeasible: false,
        }
    }
}

impl ThetaGrid {
    /// Every admissible pair in canonical order (θ_t, then θ_l, ascending).
    pub fn configurations(&self) -> Vec<ThetaPair> {
        (0..=STEPS)
            .flat_map(|t| (0..=STEPS).map(move |l| ThetaPair::new(t, l)))
            .filter(|p| self.include_infeasible || p.is_feasible())
            .collect()
    }

    /// Draws `sample_count` distinct pairs, clamped to the grid size, and
    /// returns them in canonical order.
    pub fn sample(&self) -> Vec<ThetaPair> {
        let all = self.configurations();
        let n = if self.sample_count > all.len() {
            warn!(
                "sample_count {} exceeds the {} admissible pairs; evaluating all of them",
                self.sample_count,
                all.len()
            );
            all.len()
        } else {
            self.sample_count
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut picked: Vec<ThetaPair> = all.choose_multiple(&mut rng, n).copied().collect();
        picked.sort();
        picked
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityWeights {
    pub ndcg: f64,
    pub topic: f64,
    pub locality: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        UtilityWeights {
            ndcg: 0.4,
            topic: 0.3,
            locality: 0.3,
        }
    }
}

impl UtilityWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("ndcg", self.ndcg), ("topic", self.topic), ("locality", self.locality)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("utility weight {name} = {w} must be non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RawMetrics {
    pub ndcg10: f64,
    pub ckl_topic: f64,
    pub ckl_locality: f64,
}

/// Min-max normalized metrics, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NormalizedMetrics {
    pub ndcg10: f64,
    pub ckl_topic: f64,
    pub ckl_locality: f64,
}

pub fn utility_score(m: &NormalizedMetrics, w: &UtilityWeights) -> f64 {
    w.ndcg * m.ndcg10 - w.topic * m.ckl_topic - w.locality * m.ckl_locality
}

/// One reader-day of held-out data.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayDay {
    pub user_id: String,
    pub date: NaiveDate,
    pub candidates: Vec<ScoredCandidate>,
    pub clicked: HashSet<String>,
    pub targets: CalibrationTargets,
}

#[derive(Debug, Clone)]
pub struct ReplayDataset {
    pub corpus: Corpus,
    pub days: Vec<ReplayDay>,
}

impl ReplayDataset {
    /// One day per (reader, date) with at least one click on that date's
    /// supply. Scores and topic targets only see clicks before the date.
    pub fn build(corpus: Corpus, users: &[UserProfile], scores: &ScoreSource, dates: &[NaiveDate]) -> Result<Self> {
        let mut days = Vec::new();
        for &date in dates {
            let supply = corpus.published_on(date);
            if supply.is_empty() {
                continue;
            }
            let ids: HashSet<&str> = supply.iter().map(|a| a.article_id.as_str()).collect();
            for user in users {
                let clicked: HashSet<String> = user
                    .click_history
                    .iter()
                    .filter(|c| c.clicked_at.date_naive() == date && ids.contains(c.article_id.as_str()))
                    .map(|c| c.article_id.clone())
                    .collect();
                if clicked.is_empty() {
                    continue;
                }
                days.push(ReplayDay {
                    user_id: user.user_id.clone(),
                    date,
                    candidates: scores.score(user, &corpus, &supply, date),
                    clicked,
                    targets: CalibrationTargets::for_user(user, &corpus, &supply, Some(date))?,
                });
            }
        }
        Ok(ReplayDataset { corpus, days })
    }
}

/// Mean nDCG and calibration divergences of DC newsletters built at `pair`.
pub fn evaluate_pair(dataset: &ReplayDataset, pair: ThetaPair, base: &CalibrationConfig) -> Result<RawMetrics> {
    if dataset.days.is_empty() {
        return Err(Error::Empty("replay dataset"));
    }
    let config = CalibrationConfig {
        theta_t: pair.theta_t(),
        theta_l: pair.theta_l(),
        mode: Mode::DC,
        allow_infeasible: base.allow_infeasible || !pair.is_feasible(),
        ..*base
    };
    let mut sum = RawMetrics::default();
    for day in &dataset.days {
        let list = rerank(&day.user_id, day.date, &day.candidates, &day.targets, &dataset.corpus, &config)?;
        let ids = list.article_ids();
        let articles: Vec<&Article> = ids.iter().map(|id| dataset.corpus.require(id)).collect::<Result<_>>()?;
        sum.ndcg10 += ndcg_at_k(&ids, &day.clicked, config.k);
        sum.ckl_topic += kl_divergence(
            &day.targets.user_topics,
            &newsletter_distribution::<TopicLabel>(&articles)?,
            config.alpha,
        )?;
        sum.ckl_locality += kl_divergence(
            &day.targets.supply_locality,
            &newsletter_distribution::<LocalityLabel>(&articles)?,
            config.alpha,
        )?;
    }
    let n = dataset.days.len() as f64;
    Ok(RawMetrics {
        ndcg10: sum.ndcg10 / n,
        ckl_topic: sum.ckl_topic / n,
        ckl_locality: sum.ckl_locality / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningRow {
    pub pair: ThetaPair,
    pub theta_t: f64,
    pub theta_l: f64,
    pub raw: RawMetrics,
    pub normalized: NormalizedMetrics,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningTable {
    /// Canonical order.
    pub rows: Vec<TuningRow>,
    pub selected: usize,
    pub weights: UtilityWeights,
}

fn min_max(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn scale(x: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

impl TuningTable {
    /// Normalizes raw metrics over the given rows and picks the utility
    /// argmax; ties go to the first pair in canonical order.
    pub fn from_raw(mut raw: Vec<(ThetaPair, RawMetrics)>, weights: UtilityWeights) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Empty("tuning table"));
        }
        weights.validate()?;
        raw.sort_by_key(|(p, _)| *p);
        let ndcg = min_max(raw.iter().map(|(_, m)| m.ndcg10));
        let topic = min_max(raw.iter().map(|(_, m)| m.ckl_topic));
        let loc = min_max(raw.iter().map(|(_, m)| m.ckl_locality));
        let rows: Vec<TuningRow> = raw
            .into_iter()
            .map(|(pair, m)| {
                let normalized = NormalizedMetrics {
                    ndcg10: scale(m.ndcg10, ndcg),
                    ckl_topic: scale(m.ckl_topic, topic),
                    ckl_locality: scale(m.ckl_locality, loc),
                };
                TuningRow {
                    pair,
                    theta_t: pair.theta_t(),
                    theta_l: pair.theta_l(),
                    raw: m,
                    normalized,
                    utility: utility_score(&normalized, &weights),
                }
            })
            .collect();
        let mut selected = 0;
        for (i, r) in rows.iter().enumerate() {
            if r.utility > rows[selected].utility {
                selected = i;
            }
        }
        Ok(TuningTable { rows, selected, weights })
    }

    pub fn selected_row(&self) -> &TuningRow {
        &self.rows[self.selected]
    }

    pub fn selected_pair(&self) -> ThetaPair {
        self.rows[self.selected].pair
    }

    pub fn get(&self, pair: ThetaPair) -> Option<&TuningRow> {
        self.rows.iter().find(|r| r.pair == pair)
    }
}

fn evaluate_all(dataset: &ReplayDataset, pairs: &[ThetaPair], base: &CalibrationConfig) -> Result<Vec<(ThetaPair, RawMetrics)>> {
    if dataset.days.is_empty() {
        return Err(Error::Empty("replay dataset"));
    }
    base.validate()?;
    pairs
        .par_iter()
        .map(|&p| evaluate_pair(dataset, p, base).map(|m| (p, m)))
        .collect()
}

/// Evaluates a seeded sample of the grid and returns the full table with the
/// selected pair.
pub fn random_search(
    dataset: &ReplayDataset,
    grid: &ThetaGrid,
    weights: UtilityWeights,
    base: &CalibrationConfig,
) -> Result<TuningTable> {
    assert!(
        coverage_probability(DEFAULT_SAMPLE_COUNT) >= 0.95,
        "default sample count does not reach 95% coverage of the top 5%"
    );
    if grid.sample_count == 0 {
        return Err(Error::Config("sample_count must be positive".into()));
    }
    if coverage_probability(grid.sample_count) < 0.95 {
        warn!(
            "sample_count {} gives only {:.3} probability of reaching the top 5%",
            grid.sample_count,
            coverage_probability(grid.sample_count)
        );
    }
    weights.validate()?;
    let raw = evaluate_all(dataset, &grid.sample(), base)?;
    TuningTable::from_raw(raw, weights)
}

/// Evaluates every admissible pair.
pub fn exhaustive_search(
    dataset: &ReplayDataset,
    grid: &ThetaGrid,
    weights: UtilityWeights,
    base: &CalibrationConfig,
) -> Result<TuningTable> {
    weights.validate()?;
    let raw = evaluate_all(dataset, &grid.configurations(), base)?;
    TuningTable::from_raw(raw, weights)
}

/// Writes the full 21 × 21 grid as CSV. Unsampled cells have empty metric
/// fields; the selected pair has `selected = 1`.
pub fn write_heatmap<W: Write>(table: &TuningTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["theta_t", "theta_l", "ndcg10", "ckl_topic", "ckl_locality", "utility", "selected"])?;
    let selected = table.selected_pair();
    for t in 0..=STEPS {
        for l in 0..=STEPS {
            let pair = ThetaPair::new(t, l);
            let mut rec = vec![format!("{:.2}", pair.theta_t()), format!("{:.2}", pair.theta_l())];
            match table.get(pair) {
                Some(r) => rec.extend([
                    format!("{:.6}", r.raw.ndcg10),
                    format!("{:.6}", r.raw.ckl_topic),
                    format!("{:.6}", r.raw.ckl_locality),
                    format!("{:.6}", r.utility),
                ]),
                None => rec.extend([String::new(), String::new(), String::new(), String::new()]),
            }
            rec.push(if pair == selected { "1" } else { "0" }.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("heatmap", e))?;
    Ok(())
}

pub fn emit_heatmap(table: &TuningTable, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_heatmap(table, std::io::BufWriter::new(file))
}
