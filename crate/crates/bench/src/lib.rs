//! Seeded fixtures shared by the benchmarks.

use chrono::NaiveDate;
use dualcal::corpus::TopicLabel;
use dualcal::{Article, CalibrationTargets, Corpus, Distribution, ScoredCandidate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TAGS: [&str; 8] = ["U.S. news", "Washington news", "World news", "Politics", "Business", "Sports", "Science", "Health"];

pub fn date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2025, 3, 3).unwrap()
}

/// A candidate pool with random tags and scores plus matching targets.
pub struct RerankFixture {
    pub corpus: Corpus,
    pub candidates: Vec<ScoredCandidate>,
    pub targets: CalibrationTargets,
}

pub fn rerank_fixture(seed: u64, n: usize) -> RerankFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut articles = Vec::with_capacity(n);
    let mut candidates = Vec::with_capacity(n);
    for i in 0..n {
        let count = rng.gen_range(1..=3);
        let tags: Vec<String> = TAGS.choose_multiple(&mut rng, count).map(|t| t.to_string()).collect();
        let id = format!("a{i:04}");
        articles.push(Article::new(id.clone(), date(), "headline", "subhead", tags));
        candidates.push(ScoredCandidate::new(id, rng.gen::<f64>()));
    }
    let corpus = Corpus::from_articles(articles).expect("unique ids");
    let supply: Vec<&Article> = corpus.articles().iter().collect();
    let weights: Vec<(TopicLabel, f64)> = TopicLabel::ALL.iter().map(|&t| (t, rng.gen::<f64>())).collect();
    let targets = CalibrationTargets {
        user_topics: Distribution::from_weights(&weights).expect("positive weights"),
        supply_locality: dualcal::distributions::supply_locality_distribution(&supply).expect("non-empty supply"),
    };
    RerankFixture { corpus, candidates, targets }
}

/// Two random probability vectors of length `n`; zeros appear in `q`.
pub fn distribution_pair(rng: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut draw = |zero_prob: f64| {
        let mut v: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(zero_prob) { 0.0 } else { rng.gen::<f64>() })
            .collect();
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    };
    let p = draw(0.0);
    let q = draw(0.3);
    (p, q)
}

/// A whitespace-joined sentence over a small vocabulary.
pub fn sentence(rng: &mut impl Rng, len: usize) -> String {
    const WORDS: [&str; 12] = ["the", "cat", "sat", "on", "mat", "river", "vote", "city", "fire", "storm", "court", "team"];
    (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}
