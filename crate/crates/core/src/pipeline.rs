//! From user timelines to model inputs: topic words and feature scaling
//! fitted on training users, plus the per-user token sequence chosen by the
//! input mode.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{extract_features, BehaviorFeatures};
use crate::corpus::{Label, Tweet, UserRecord};
use crate::error::{Error, Result};
use crate::layers::WordVectors;
use crate::lexicon::Lexicons;
use crate::model::{BehaviorSequence, Scaler, UserInput};
use crate::seed::{derive_seed, rng_for};
use crate::summarize::{
    abstractive, extract, AbstractiveProvider, ConcatTruncate, EmbeddingProvider, HashingEmbedder, Metric,
};
use crate::text::{content_tokens, default_stopwords};
use crate::topicmodel::{fit, LdaConfig, TopicModel};

pub const PIPELINE_FILE: &str = "pipeline.json";
pub const DEFAULT_TOP_WORDS: usize = 5;

/// Which tweets feed the summary branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Extractive selection of `m` tweets, then condensation.
    #[default]
    Summary,
    FirstM,
    LastM,
    /// `m` tweets drawn without replacement, kept in time order.
    RandomM,
}

impl InputMode {
    pub const ALL: [InputMode; 4] = [InputMode::Summary, InputMode::FirstM, InputMode::LastM, InputMode::RandomM];

    pub fn name(self) -> &'static str {
        match self {
            InputMode::Summary => "summary",
            InputMode::FirstM => "first_m",
            InputMode::LastM => "last_m",
            InputMode::RandomM => "random_m",
        }
    }
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InputMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown input mode {s:?}")))
    }
}

/// Summarisation back ends.
#[derive(Clone)]
pub struct Providers {
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub condenser: Arc<dyn AbstractiveProvider>,
    pub metric: Metric,
}

impl Providers {
    /// Feature hashing and concatenation; no network.
    pub fn offline(seed: u64) -> Self {
        Self {
            embedder: Arc::new(HashingEmbedder::new(derive_seed(seed, "hashing-embedder"))),
            condenser: Arc::new(ConcatTruncate),
            metric: Metric::Euclidean,
        }
    }
}

/// Everything besides the users that a run reads.
#[derive(Clone)]
pub struct Resources {
    pub lexicons: Arc<Lexicons>,
    pub stopwords: Arc<HashSet<String>>,
    pub providers: Providers,
    /// Pretrained word vectors; seeded random embeddings when absent.
    pub word_vectors: Option<Arc<WordVectors>>,
}

impl Resources {
    pub fn new(lexicons: Lexicons, seed: u64) -> Self {
        Self {
            lexicons: Arc::new(lexicons),
            stopwords: Arc::new(default_stopwords()),
            providers: Providers::offline(seed),
            word_vectors: None,
        }
    }
}

/// A fitted topic model and the user ids it read.
#[derive(Debug, Clone)]
pub struct TopicFit {
    pub model: TopicModel,
    pub words: Vec<String>,
    pub touched: Vec<String>,
}

/// One document per tweet of every depressed user, stop words removed;
/// tweets left empty are skipped. Also returns every user id inspected.
pub fn topic_corpus(users: &[UserRecord], stopwords: &HashSet<String>) -> Result<(Vec<Vec<String>>, Vec<String>)> {
    let mut docs = Vec::new();
    let mut touched = Vec::with_capacity(users.len());
    for u in users {
        touched.push(u.user_id.clone());
        if u.require_label()? == Label::Depressed {
            docs.extend(
                u.tweets
                    .iter()
                    .map(|t| content_tokens(&t.text, stopwords))
                    .filter(|d| !d.is_empty()),
            );
        }
    }
    Ok((docs, touched))
}

pub fn fit_topics(
    users: &[UserRecord],
    stopwords: &HashSet<String>,
    config: LdaConfig,
    top_words: usize,
) -> Result<TopicFit> {
    let (docs, touched) = topic_corpus(users, stopwords)?;
    if docs.is_empty() {
        return Err(Error::Topic("no depressed-user tweets to fit topics on".into()));
    }
    let model = fit(&docs, config)?;
    let words = model.topic_words(top_words);
    Ok(TopicFit { model, words, touched })
}

/// Training-set statistics needed to turn a user into behaviour features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub topic_words: Vec<String>,
    pub scaler: Scaler,
    /// Ids of every user read while fitting.
    pub fitted_on: Vec<String>,
}

impl FeaturePipeline {
    pub fn fit(users: &[UserRecord], res: &Resources, lda: LdaConfig, top_words: usize) -> Result<Self> {
        let topics = fit_topics(users, &res.stopwords, lda, top_words)?;
        let feats = users
            .par_iter()
            .map(|u| extract_features(u, &res.lexicons, &topics.words))
            .collect::<Result<Vec<_>>>()?;
        let scaler = Scaler::fit(&feats)?;
        let mut fitted_on: BTreeSet<String> = topics.touched.into_iter().collect();
        fitted_on.extend(feats.into_iter().map(|f| f.user_id));
        Ok(Self {
            topic_words: topics.words,
            scaler,
            fitted_on: fitted_on.into_iter().collect(),
        })
    }

    pub fn features(&self, user: &UserRecord, lex: &Lexicons) -> Result<BehaviorFeatures> {
        extract_features(user, lex, &self.topic_words)
    }

    pub fn behavior(&self, user: &UserRecord, lex: &Lexicons) -> Result<BehaviorSequence> {
        self.scaler.transform(&self.features(user, lex)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(PIPELINE_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::file(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(PIPELINE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Per-user seed for tweet selection.
fn user_seed(seed: u64, user: &UserRecord) -> u64 {
    derive_seed(seed, &format!("select:{}", user.user_id))
}

/// The tweets `mode` selects from a time-ordered timeline.
pub fn select_tweets(user: &UserRecord, mode: InputMode, m: usize, seed: u64, providers: &Providers) -> Result<Vec<Tweet>> {
    let tweets = &user.tweets;
    if tweets.is_empty() {
        return Err(Error::NoTweets(user.user_id.clone()));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    let n = tweets.len();
    let take = m.min(n);
    Ok(match mode {
        InputMode::Summary => extract(tweets, providers.embedder.as_ref(), m, user_seed(seed, user), providers.metric)?,
        InputMode::FirstM => tweets[..take].to_vec(),
        InputMode::LastM => tweets[n - take..].to_vec(),
        InputMode::RandomM => {
            let mut idx = sample(&mut rng_for(user_seed(seed, user), "random_m"), n, take).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| tweets[i].clone()).collect()
        }
    })
}

/// Token sequence for the summary branch, at most `n_max` long.
pub fn input_tokens(
    user: &UserRecord,
    mode: InputMode,
    m: usize,
    n_max: usize,
    seed: u64,
    providers: &Providers,
) -> Result<Vec<String>> {
    let selected = select_tweets(user, mode, m, seed, providers)?;
    let condenser: &dyn AbstractiveProvider = match mode {
        InputMode::Summary => providers.condenser.as_ref(),
        _ => &ConcatTruncate,
    };
    Ok(abstractive(&selected, condenser, n_max)?.tokens)
}

/// Model inputs for `users`, in input order.
pub fn prepare_inputs(
    users: &[UserRecord],
    pipeline: &FeaturePipeline,
    res: &Resources,
    mode: InputMode,
    m: usize,
    n_max: usize,
    seed: u64,
) -> Result<Vec<UserInput>> {
    users
        .par_iter()
        .map(|u| {
            let mut tokens = input_tokens(u, mode, m, n_max, seed, &res.providers)?;
            if tokens.is_empty() {
                // every selected tweet tokenised to nothing
                tokens.push(String::new());
            }
            Ok(UserInput {
                user_id: u.user_id.clone(),
                label: u.label,
                tokens,
                behavior: pipeline.behavior(u, &res.lexicons)?,
            })
        })
        .collect()
}

/// Sorted distinct tokens of `inputs`.
pub fn vocabulary(inputs: &[UserInput]) -> Vec<String> {
    inputs
        .iter()
        .flat_map(|i| i.tokens.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use chrono::DateTime;

    use super::*;

    fn user(n: usize) -> UserRecord {
        UserRecord {
            user_id: "u".into(),
            label: Some(Label::Depressed),
            followers_count: 1,
            friends_count: 1,
            tweets: (0..n)
                .map(|i| Tweet {
                    id: format!("t{i}"),
                    text: format!("tweet number {i}"),
                    created_at: DateTime::from_timestamp(i as i64 * 100, 0).unwrap(),
                    is_retweet: false,
                })
                .collect(),
        }
    }

    fn ids(t: &[Tweet]) -> Vec<&str> {
        t.iter().map(|t| t.id.as_str()).collect()
    }

    #[test]
    fn first_and_last_m() {
        let u = user(30);
        let p = Providers::offline(0);
        let first = select_tweets(&u, InputMode::FirstM, 20, 0, &p).unwrap();
        assert_eq!(ids(&first), (0..20).map(|i| format!("t{i}")).collect::<Vec<_>>());
        let last = select_tweets(&u, InputMode::LastM, 20, 0, &p).unwrap();
        assert_eq!(last[0].id, "t10");
        assert_eq!(last.len(), 20);
    }

    #[test]
    fn random_m_is_seeded_and_ordered() {
        let u = user(30);
        let p = Providers::offline(0);
        let a = select_tweets(&u, InputMode::RandomM, 20, 5, &p).unwrap();
        let b = select_tweets(&u, InputMode::RandomM, 20, 5, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert!(a.windows(2).all(|w| w[0].created_at < w[1].created_at));
        assert_ne!(a, select_tweets(&u, InputMode::RandomM, 20, 6, &p).unwrap());
    }

    #[test]
    fn summary_mode_is_subsequence() {
        let u = user(30);
        let p = Providers::offline(0);
        let s = select_tweets(&u, InputMode::Summary, 20, 1, &p).unwrap();
        assert!(s.len() <= 20 && !s.is_empty());
        assert!(s.windows(2).all(|w| w[0].created_at < w[1].created_at));
        let tokens = input_tokens(&u, InputMode::Summary, 20, 7, 1, &p).unwrap();
        assert_eq!(tokens.len(), 7);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in InputMode::ALL {
            assert_eq!(m.name().parse::<InputMode>().unwrap(), m);
        }
        assert!("middle".parse::<InputMode>().is_err());
    }
}
