//! Topic and locality distributions and the smoothed KL calibration metric.
//!
//! Every article carries one unit of mass per axis, split uniformly over its
//! labels. Aggregates (user history, newsletter, supply) are unweighted means
//! of those per-article masses, renormalized over the articles that carry
//! mass on the axis.

use std::fmt::Debug;
use std::marker::PhantomData;

use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::corpus::{Article, LocalityLabel, TopicLabel, UserProfile, Corpus};
use crate::error::{Error, Result};

/// Default smoothing weight for the KL target.
pub const DEFAULT_ALPHA: f64 = 0.01;

/// A closed label space with a per-article mass rule.
pub trait Label: Copy + Ord + Debug + Send + Sync + 'static {
    const COUNT: usize;

    fn index(self) -> usize;
    fn all() -> &'static [Self];
    fn name(self) -> &'static str;
    /// Labels of `article` on this axis; empty means the article carries no
    /// mass here.
    fn of_article(article: &Article) -> Vec<Self>;
}

impl Label for TopicLabel {
    const COUNT: usize = 14;

    fn index(self) -> usize {
        TopicLabel::index(self)
    }
    fn all() -> &'static [Self] {
        &TopicLabel::ALL
    }
    fn name(self) -> &'static str {
        self.as_str()
    }
    fn of_article(article: &Article) -> Vec<Self> {
        article.topics().to_vec()
    }
}

impl Label for LocalityLabel {
    const COUNT: usize = 3;

    fn index(self) -> usize {
        LocalityLabel::index(self)
    }
    fn all() -> &'static [Self] {
        &LocalityLabel::ALL
    }
    fn name(self) -> &'static str {
        self.as_str()
    }
    fn of_article(article: &Article) -> Vec<Self> {
        article.locality().labels()
    }
}

/// Which axis a distribution or divergence is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Topic,
    Locality,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Topic => "topic",
            Axis::Locality => "locality",
        }
    }
}

/// Probability mass over a label space. An all-zero mass vector is the
/// "empty" distribution.
#[derive(Clone, PartialEq)]
pub struct Distribution<L: Label> {
    mass: Vec<f64>,
    _label: PhantomData<L>,
}

pub type TopicDistribution = Distribution<TopicLabel>;
pub type LocalityDistribution = Distribution<LocalityLabel>;

impl<L: Label> Debug for Distribution<L> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut map = f.debug_map();
        for &l in L::all() {
            let m = self.mass[l.index()];
            if m > 0.0 {
                map.entry(&l.name(), &m);
            }
        }
        map.finish()
    }
}

impl<L: Label> Serialize for Distribution<L> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(None)?;
        for &l in L::all() {
            let m = self.mass[l.index()];
            if m > 0.0 {
                map.serialize_entry(l.name(), &m)?;
            }
        }
        map.end()
    }
}

impl<L: Label> Distribution<L> {
    pub fn empty() -> Self {
        Distribution {
            mass: vec![0.0; L::COUNT],
            _label: PhantomData,
        }
    }

    pub fn uniform_over(labels: &[L]) -> Self {
        let mut d = Self::empty();
        if labels.is_empty() {
            return d;
        }
        let mut uniq = labels.to_vec();
        uniq.sort();
        uniq.dedup();
        let share = 1.0 / uniq.len() as f64;
        for l in uniq {
            d.mass[l.index()] = share;
        }
        d
    }

    pub fn uniform() -> Self {
        Self::uniform_over(L::all())
    }

    /// Normalizes non-negative weights; all-zero weights give the empty
    /// distribution.
    pub fn from_weights(weights: &[(L, f64)]) -> Result<Self> {
        let mut d = Self::empty();
        for &(l, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("weight {w} for {} is not a finite non-negative number", l.name())));
            }
            d.mass[l.index()] += w;
        }
        d.normalize();
        Ok(d)
    }

    pub(crate) fn from_raw(mass: Vec<f64>) -> Self {
        debug_assert_eq!(mass.len(), L::COUNT);
        let mut d = Distribution { mass, _label: PhantomData };
        d.normalize();
        d
    }

    fn normalize(&mut self) {
        let total: f64 = self.mass.iter().sum();
        if total > 0.0 {
            for m in &mut self.mass {
                *m /= total;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.mass.iter().all(|&m| m == 0.0)
    }

    pub fn get(&self, label: L) -> f64 {
        self.mass[label.index()]
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Labels with positive mass, in label order.
    pub fn support(&self) -> Vec<L> {
        L::all().iter().copied().filter(|l| self.get(*l) > 0.0).collect()
    }
}

/// Running sum of per-article masses; the mean over contributing articles is
/// the aggregate distribution.
#[derive(Debug, Clone)]
pub struct MassAccumulator<L: Label> {
    sums: Vec<f64>,
    contributors: usize,
    _label: PhantomData<L>,
}

impl<L: Label> Default for MassAccumulator<L> {
    fn default() -> Self {
        MassAccumulator {
            sums: vec![0.0; L::COUNT],
            contributors: 0,
            _label: PhantomData,
        }
    }
}

impl<L: Label> MassAccumulator<L> {
    pub fn add(&mut self, article: &Article) {
        let labels = L::of_article(article);
        if labels.is_empty() {
            return;
        }
        let share = 1.0 / labels.len() as f64;
        for l in labels {
            self.sums[l.index()] += share;
        }
        self.contributors += 1;
    }

    pub fn merge(&mut self, other: &MassAccumulator<L>) {
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.contributors += other.contributors;
    }

    /// Number of articles that carried mass on this axis.
    pub fn contributors(&self) -> usize {
        self.contributors
    }

    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    pub fn distribution(&self) -> Distribution<L> {
        if self.contributors == 0 {
            return Distribution::empty();
        }
        let n = self.contributors as f64;
        Distribution::from_raw(self.sums.iter().map(|s| s / n).collect())
    }
}

impl<'a, L: Label> FromIterator<&'a Article> for MassAccumulator<L> {
    fn from_iter<I: IntoIterator<Item = &'a Article>>(iter: I) -> Self {
        let mut acc = MassAccumulator::default();
        for a in iter {
            acc.add(a);
        }
        acc
    }
}

/// Unit mass split over the article's labels on axis `L`.
pub fn article_mass<L: Label>(article: &Article) -> Distribution<L> {
    MassAccumulator::<L>::from_iter([article]).distribution()
}

pub fn article_topic_mass(article: &Article) -> TopicDistribution {
    article_mass(article)
}

pub fn article_locality_mass(article: &Article) -> LocalityDistribution {
    article_mass(article)
}

/// Click-derived topic distribution with the cold-start fallback: onboarding
/// topics uniformly, then all 14 topics uniformly.
pub fn topic_distribution_from_history<'a>(
    history: impl IntoIterator<Item = &'a Article>,
    onboarding: &[TopicLabel],
) -> TopicDistribution {
    let dist = history.into_iter().collect::<MassAccumulator<TopicLabel>>().distribution();
    if !dist.is_empty() {
        return dist;
    }
    if !onboarding.is_empty() {
        return Distribution::uniform_over(onboarding);
    }
    Distribution::uniform()
}

/// p(t|u) over the whole click history.
pub fn user_topic_distribution(user: &UserProfile, corpus: &Corpus) -> TopicDistribution {
    topic_distribution_from_history(user.history_articles(corpus, None), &user.onboarding_topics)
}

pub fn supply_locality_distribution(articles: &[&Article]) -> Result<LocalityDistribution> {
    if articles.is_empty() {
        return Err(Error::Empty("supply article set"));
    }
    Ok(articles.iter().copied().collect::<MassAccumulator<LocalityLabel>>().distribution())
}

/// Unweighted mean of per-article mass over the list (no rank discount).
pub fn newsletter_distribution<L: Label>(list: &[&Article]) -> Result<Distribution<L>> {
    if list.is_empty() {
        return Err(Error::Empty("newsletter"));
    }
    Ok(list.iter().copied().collect::<MassAccumulator<L>>().distribution())
}

/// Smoothed KL divergence `Σ p·ln(p / q̃)` with `q̃ = (1−α)q + αp`.
pub fn kl_divergence<L: Label>(p: &Distribution<L>, q: &Distribution<L>, alpha: f64) -> Result<f64> {
    kl_divergence_raw(&p.mass, &q.mass, alpha)
}

/// Slice form of [`kl_divergence`]; the label space is the slice index.
pub fn kl_divergence_raw(p: &[f64], q: &[f64], alpha: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LabelSpaceMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("smoothing alpha {alpha} outside [0, 1]")));
    }
    let mut total = 0.0;
    for (&pm, &qm) in p.iter().zip(q) {
        if pm <= 0.0 {
            continue;
        }
        let smoothed = (1.0 - alpha) * qm + alpha * pm;
        if smoothed <= 0.0 {
            return Err(Error::UndefinedDivergence { mass: pm });
        }
        total += pm * (pm / smoothed).ln();
    }
    // Gibbs' inequality; negative values are rounding noise.
    Ok(total.max(0.0))
}

/// Cosine similarity of two equal-length vectors; `None` when either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}
