//! Two-stage timeline summarisation: pick representative tweets by
//! clustering their embeddings, then condense the picks into one token
//! sequence.

pub mod kmeans;
pub mod provider;

use serde::{Deserialize, Serialize};

use crate::corpus::Tweet;
use crate::error::{Error, Result};

pub use kmeans::{kmeans, squared_distance, KMeans};
pub use provider::{
    AbstractiveProvider, ConcatTruncate, EmbeddingProvider, HashingEmbedder, HttpAbstractive, HttpConfig,
    HttpEmbedder,
};

pub const DEFAULT_M: usize = 20;
pub const DEFAULT_N_MAX: usize = 100;
pub const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// Vectors are scaled to unit length before clustering.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TweetEmbedding {
    pub tweet_id: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub tokens: Vec<String>,
    pub source_tweet_ids: Vec<String>,
}

/// Embeds every tweet, checking the provider's output.
pub fn embed_tweets(tweets: &[Tweet], provider: &dyn EmbeddingProvider) -> Result<Vec<TweetEmbedding>> {
    let texts: Vec<String> = tweets.iter().map(|t| t.text.clone()).collect();
    let context = |why: String| {
        let first = tweets.first().map_or("", |t| t.id.as_str());
        let last = tweets.last().map_or("", |t| t.id.as_str());
        Error::Provider(format!("embedding {} tweets ({first}..{last}): {why}", tweets.len()))
    };
    let vectors = provider.embed(&texts).map_err(|e| context(e.to_string()))?;
    if vectors.len() != tweets.len() {
        return Err(context(format!("got {} vectors", vectors.len())));
    }
    let dim = provider.dimension();
    tweets
        .iter()
        .zip(vectors)
        .map(|(t, v)| {
            if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
                return Err(context(format!("tweet {} has a malformed vector", t.id)));
            }
            Ok(TweetEmbedding {
                tweet_id: t.id.clone(),
                vector: v,
            })
        })
        .collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter().map(|x| x / norm).collect()
    } else {
        v.to_vec()
    }
}

/// Selects up to `m` representative tweets: one per k-means cluster, the
/// member nearest its centroid. The result keeps the input order.
pub fn extract(
    tweets: &[Tweet],
    provider: &dyn EmbeddingProvider,
    m: usize,
    seed: u64,
    metric: Metric,
) -> Result<Vec<Tweet>> {
    if tweets.is_empty() {
        return Err(Error::InvalidArgument("cannot summarise an empty timeline".into()));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    if m >= tweets.len() {
        return Ok(tweets.to_vec());
    }
    let mut points: Vec<Vec<f64>> = embed_tweets(tweets, provider)?
        .into_iter()
        .map(|e| e.vector)
        .collect();
    if metric == Metric::Cosine {
        points = points.iter().map(|p| unit(p)).collect();
    }
    let km = kmeans(&points, m, seed, KMEANS_MAX_ITERS)?;
    let mut picked = vec![false; tweets.len()];
    for c in &km.centroids {
        let mut best = (0, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = squared_distance(p, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        picked[best.0] = true;
    }
    Ok(tweets
        .iter()
        .zip(picked)
        .filter(|&(_, keep)| keep)
        .map(|(t, _)| t.clone())
        .collect())
}

/// Condenses the selected tweets. Falls back to [`ConcatTruncate`] when the
/// provider fails or returns nothing.
pub fn abstractive(selected: &[Tweet], provider: &dyn AbstractiveProvider, n_max: usize) -> Result<Summary> {
    if selected.is_empty() {
        return Err(Error::InvalidArgument("no tweets selected".into()));
    }
    let texts: Vec<String> = selected.iter().map(|t| t.text.clone()).collect();
    let mut tokens = match provider.condense(&texts, n_max) {
        Ok(t) if !t.is_empty() => t,
        Ok(_) => {
            log::warn!("abstractive provider returned an empty summary, using concatenation");
            ConcatTruncate.condense(&texts, n_max)?
        }
        Err(e) => {
            log::warn!("abstractive provider failed ({e}), using concatenation");
            ConcatTruncate.condense(&texts, n_max)?
        }
    };
    tokens.truncate(n_max);
    Ok(Summary {
        tokens,
        source_tweet_ids: selected.iter().map(|t| t.id.clone()).collect(),
    })
}

/// Extraction followed by condensation.
pub fn summarize(
    tweets: &[Tweet],
    embedder: &dyn EmbeddingProvider,
    condenser: &dyn AbstractiveProvider,
    m: usize,
    n_max: usize,
    seed: u64,
    metric: Metric,
) -> Result<Summary> {
    let selected = extract(tweets, embedder, m, seed, metric)?;
    abstractive(&selected, condenser, n_max)
}

#[cfg(test)]
mod tests {
    use chrono::{TimeZone, Utc};

    use super::*;

    fn tweets(texts: &[&str]) -> Vec<Tweet> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Tweet {
                id: format!("t{i}"),
                text: t.to_string(),
                created_at: Utc.timestamp_opt(1_600_000_000 + i as i64 * 60, 0).unwrap(),
                is_retweet: false,
            })
            .collect()
    }

    /// Looks vectors up by text.
    struct Table(Vec<(&'static str, Vec<f64>)>);

    impl EmbeddingProvider for Table {
        fn dimension(&self) -> usize {
            self.0[0].1.len()
        }
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
            Ok(texts
                .iter()
                .map(|t| self.0.iter().find(|(k, _)| k == t).unwrap().1.clone())
                .collect())
        }
    }

    struct Failing;

    impl AbstractiveProvider for Failing {
        fn condense(&self, _: &[String], _: usize) -> Result<Vec<String>> {
            Err(Error::Provider("unreachable".into()))
        }
    }

    struct Empty;

    impl AbstractiveProvider for Empty {
        fn condense(&self, _: &[String], _: usize) -> Result<Vec<String>> {
            Ok(vec![])
        }
    }

    #[test]
    fn m_at_least_n_returns_all() {
        let t = tweets(&["a", "b", "c", "d", "e"]);
        let out = extract(&t, &HashingEmbedder::new(0), 5, 1, Metric::Euclidean).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn one_pick_per_cluster() {
        let table = Table(vec![
            ("a", vec![0.0, 0.0]),
            ("b", vec![0.2, 0.0]),
            ("c", vec![0.0, 0.3]),
            ("x", vec![10.0, 10.0]),
            ("y", vec![10.4, 10.0]),
            ("z", vec![10.0, 10.1]),
        ]);
        let t = tweets(&["a", "x", "b", "y", "c", "z"]);
        for seed in 0..10 {
            let out = extract(&t, &table, 2, seed, Metric::Euclidean).unwrap();
            let texts: Vec<&str> = out.iter().map(|t| t.text.as_str()).collect();
            // centroids (0.0667, 0.1) and (10.133, 10.033)
            assert_eq!(texts, ["a", "x"]);
        }
    }

    #[test]
    fn identical_embeddings_keep_earliest() {
        let table = Table(vec![("a", vec![1.0]), ("b", vec![1.0]), ("c", vec![1.0])]);
        let t = tweets(&["b", "a", "c"]);
        let out = extract(&t, &table, 2, 0, Metric::Euclidean).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, "t0");
    }

    #[test]
    fn fallback_concatenates_and_truncates() {
        let t = tweets(&["one two three", "four five six"]);
        let s = abstractive(&t, &ConcatTruncate, 100).unwrap();
        assert_eq!(s.tokens.len(), 6);
        assert_eq!(s.source_tweet_ids, ["t0", "t1"]);

        let many: Vec<&str> = vec!["a b c"; 60];
        let s = abstractive(&tweets(&many), &ConcatTruncate, 100).unwrap();
        assert_eq!(s.tokens.len(), 100);
    }

    #[test]
    fn failing_and_empty_providers_fall_back() {
        let t = tweets(&["one two", "three"]);
        assert_eq!(abstractive(&t, &Failing, 100).unwrap().tokens, ["one", "two", "three"]);
        assert_eq!(abstractive(&t, &Empty, 2).unwrap().tokens, ["one", "two"]);
    }

    #[test]
    fn cosine_groups_by_direction() {
        let table = Table(vec![
            ("a", vec![1.0, 0.0]),
            ("b", vec![5.0, 0.1]),
            ("c", vec![0.0, 1.0]),
            ("d", vec![0.1, 7.0]),
        ]);
        let t = tweets(&["a", "b", "c", "d"]);
        let out = extract(&t, &table, 2, 3, Metric::Cosine).unwrap();
        assert_eq!(out.len(), 2);
        let texts: Vec<&str> = out.iter().map(|t| t.text.as_str()).collect();
        assert!(texts.contains(&"a") || texts.contains(&"b"));
        assert!(texts.contains(&"c") || texts.contains(&"d"));
    }
}
