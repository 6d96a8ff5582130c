//! Base relevance scores. Scores are an input to calibration; this module
//! reads them from file or derives a deterministic stand-in from embeddings.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Article, Corpus, UserProfile};
use crate::distributions::cosine;
use crate::error::{Error, Result};
use crate::reranker::ScoredCandidate;

/// Score file record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub user_id: String,
    pub article_id: String,
    pub base_score: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ScoreTable {
    scores: HashMap<(String, String), f64>,
}

impl ScoreTable {
    pub fn from_records(records: impl IntoIterator<Item = ScoreRecord>) -> Result<Self> {
        let mut scores = HashMap::new();
        for r in records {
            if !r.base_score.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite score for ({}, {})",
                    r.user_id, r.article_id
                )));
            }
            scores.insert((r.user_id, r.article_id), r.base_score);
        }
        Ok(ScoreTable { scores })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(line)
                    .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e))?,
            );
        }
        Self::from_records(records)
    }

    pub fn get(&self, user_id: &str, article_id: &str) -> Option<f64> {
        self.scores
            .get(&(user_id.to_string(), article_id.to_string()))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Cosine of each article's embedding to the mean embedding of the reader's
/// clicked articles. Articles without embeddings, or readers without an
/// embedded history, score 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmbeddingScorer;

impl EmbeddingScorer {
    pub fn history_centroid(history: &[&Article]) -> Option<Vec<f64>> {
        let mut sum: Option<Vec<f64>> = None;
        for e in history.iter().filter_map(|a| a.embedding.as_ref()) {
            match &mut sum {
                None => sum = Some(e.clone()),
                Some(s) if s.len() == e.len() => s.iter_mut().zip(e).for_each(|(a, b)| *a += b),
                Some(_) => {}
            }
        }
        sum
    }

    pub fn score_with_centroid(centroid: Option<&[f64]>, article: &Article) -> f64 {
        match (centroid, article.embedding.as_deref()) {
            (Some(c), Some(e)) => cosine(c, e).unwrap_or(0.0),
            _ => 0.0,
        }
    }

    pub fn score(&self, history: &[&Article], supply: &[&Article]) -> Vec<ScoredCandidate> {
        let centroid = Self::history_centroid(history);
        supply
            .iter()
            .map(|a| ScoredCandidate::new(a.article_id.clone(), Self::score_with_centroid(centroid.as_deref(), a)))
            .collect()
    }
}

/// Where base scores come from for a run.
#[derive(Debug, Clone)]
pub enum ScoreSource {
    Table(ScoreTable),
    Embedding,
}

impl ScoreSource {
    /// Scores `supply` for `user` using clicks strictly before `date`. Table
    /// lookups fall back to the embedding scorer for missing pairs.
    pub fn score(
        &self,
        user: &UserProfile,
        corpus: &Corpus,
        supply: &[&Article],
        date: chrono::NaiveDate,
    ) -> Vec<ScoredCandidate> {
        let history = user.history_articles(corpus, Some(date));
        let fallback = EmbeddingScorer.score(&history, supply);
        match self {
            ScoreSource::Embedding => fallback,
            ScoreSource::Table(table) => fallback
                .into_iter()
                .map(|c| match table.get(&user.user_id, &c.article_id) {
                    Some(s) => ScoredCandidate::new(c.article_id, s),
                    None => c,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn art(id: &str, e: Vec<f64>) -> Article {
        Article::new(id, NaiveDate::from_ymd_opt(2025, 1, 1).unwrap(), "h", "s", vec!["Sports".into()])
            .with_embedding(e)
    }

    #[test]
    fn embedding_scorer_uses_history_centroid() {
        let h1 = art("h1", vec![1.0, 0.0]);
        let h2 = art("h2", vec![1.0, 0.0]);
        let near = art("near", vec![2.0, 0.1]);
        let far = art("far", vec![0.0, 1.0]);
        let scored = EmbeddingScorer.score(&[&h1, &h2], &[&near, &far]);
        assert!(scored[0].base_score > 0.99);
        assert!(scored[1].base_score.abs() < 1e-12);
        let cold = EmbeddingScorer.score(&[], &[&near]);
        assert_eq!(cold[0].base_score, 0.0);
    }

    #[test]
    fn score_table_rejects_non_finite() {
        let r = ScoreRecord { user_id: "u".into(), article_id: "a".into(), base_score: f64::INFINITY };
        assert!(ScoreTable::from_records([r]).is_err());
    }
}
