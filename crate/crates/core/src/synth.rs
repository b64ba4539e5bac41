//! Deterministic synthetic data.
//!
//! [`separable_users`] builds labelled timelines whose classes differ in
//! vocabulary, emoji, pronouns, posting hours and follower counts, all drawn
//! from words in the bundled lexicons. [`planted_corpus`] builds documents
//! from known disjoint topics for checking topic recovery.

use chrono::{DateTime, Duration, Utc};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Label, Tweet, UserRecord};
use crate::seed::rng_for;

pub const DEPRESSED_WORDS: &[&str] = &[
    "sad", "tired", "alone", "hopeless", "cry", "empty", "numb", "worthless", "lonely", "hurt", "pain", "dark",
    "insomnia", "exhausted", "miserable", "useless", "drained", "awake",
];
pub const CONTROL_WORDS: &[&str] = &[
    "happy", "fun", "friends", "win", "beach", "sunny", "pizza", "game", "party", "great", "good", "love", "dog",
    "weekend", "concert", "trip",
];
pub const FILLER_WORDS: &[&str] = &[
    "today", "work", "home", "week", "morning", "night", "coffee", "city", "music", "movie", "bus", "rain",
];
const DEPRESSED_EMOJI: &[&str] = &["😢", "😭", "😞", "💔"];
const CONTROL_EMOJI: &[&str] = &["😀", "😂", "😍", "🎉"];
const DEPRESSED_PRONOUNS: &[&str] = &["i", "me", "my", "myself"];
const CONTROL_PRONOUNS: &[&str] = &["we", "our", "us"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    /// Half of the users are depressed.
    pub users: usize,
    pub min_tweets: usize,
    pub max_tweets: usize,
    /// Chance that a tweet carries a class word.
    pub signal: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 40,
            min_tweets: 24,
            max_tweets: 32,
            signal: 0.7,
            seed: 7,
        }
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words.choose(rng).expect("word lists are non-empty")
}

fn tweet_text(rng: &mut ChaCha8Rng, depressed: bool, signal: f64) -> String {
    let (class_words, emoji, pronouns) = if depressed {
        (DEPRESSED_WORDS, DEPRESSED_EMOJI, DEPRESSED_PRONOUNS)
    } else {
        (CONTROL_WORDS, CONTROL_EMOJI, CONTROL_PRONOUNS)
    };
    let mut words = vec![pick(rng, pronouns)];
    for _ in 0..rng.random_range(1..=2) {
        words.push(pick(rng, FILLER_WORDS));
    }
    if rng.random_bool(signal) {
        for _ in 0..rng.random_range(1..=2) {
            words.push(pick(rng, class_words));
        }
    }
    if rng.random_bool(0.3) {
        words.push(pick(rng, emoji));
    }
    words.join(" ")
}

/// `config.users` labelled users alternating depressed / non-depressed.
pub fn separable_users(config: &SynthConfig) -> Vec<UserRecord> {
    let start: DateTime<Utc> = DateTime::from_timestamp(1_577_836_800, 0).expect("valid epoch"); // 2020-01-01
    (0..config.users)
        .map(|u| {
            let depressed = u % 2 == 0;
            let mut rng = rng_for(config.seed, &format!("synth-user:{u}"));
            let n = rng.random_range(config.min_tweets..=config.max_tweets);
            let mut day = start;
            let tweets = (0..n)
                .map(|i| {
                    day += Duration::days(rng.random_range(1..=3));
                    let hour = if depressed {
                        if rng.random_bool(0.75) {
                            rng.random_range(0..5)
                        } else {
                            rng.random_range(0..24)
                        }
                    } else {
                        rng.random_range(9..21)
                    };
                    let at = day + Duration::hours(hour) + Duration::minutes(rng.random_range(0..60));
                    Tweet {
                        id: format!("s{u:02}-{i:02}"),
                        text: tweet_text(&mut rng, depressed, config.signal),
                        created_at: at,
                        is_retweet: rng.random_bool(if depressed { 0.1 } else { 0.3 }),
                    }
                })
                .collect();
            UserRecord {
                user_id: format!("synth{u:02}"),
                label: Some(if depressed { Label::Depressed } else { Label::NonDepressed }),
                followers_count: if depressed {
                    rng.random_range(20..300)
                } else {
                    rng.random_range(400..2000)
                },
                friends_count: rng.random_range(50..500),
                tweets,
            }
        })
        .collect()
}

/// A corpus drawn from known topics.
#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub docs: Vec<Vec<String>>,
    /// Vocabulary of each planted topic; the lists are disjoint.
    pub topics: Vec<Vec<String>>,
}

/// `docs` documents of `doc_len` tokens over `topics` topics of `words`
/// words each. Every document mixes at most two topics, one dominant.
pub fn planted_corpus(topics: usize, words: usize, docs: usize, doc_len: usize, seed: u64) -> PlantedCorpus {
    let vocab: Vec<Vec<String>> = (0..topics)
        .map(|k| (0..words).map(|w| format!("t{k}w{w}")).collect())
        .collect();
    let mut rng = rng_for(seed, "planted-corpus");
    let docs = (0..docs)
        .map(|_| {
            let main = rng.random_range(0..topics);
            let other = rng.random_range(0..topics);
            (0..doc_len)
                .map(|_| {
                    let k = if rng.random_bool(0.8) { main } else { other };
                    vocab[k][rng.random_range(0..words)].clone()
                })
                .collect()
        })
        .collect();
    PlantedCorpus { docs, topics: vocab }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::filter_users;

    #[test]
    fn generator_is_deterministic_and_balanced() {
        let cfg = SynthConfig::default();
        let a = separable_users(&cfg);
        assert_eq!(a, separable_users(&cfg));
        assert_eq!(a.len(), 40);
        let depressed = a.iter().filter(|u| u.label == Some(Label::Depressed)).count();
        assert_eq!(depressed, 20);
        assert_eq!(filter_users(a.clone(), 10, 5000).len(), 40);
        for u in &a {
            assert!(u.tweets.windows(2).all(|w| w[0].created_at < w[1].created_at));
        }
    }

    #[test]
    fn planted_topics_are_disjoint() {
        let c = planted_corpus(5, 10, 100, 40, 1);
        assert_eq!(c.docs.len(), 100);
        let all: std::collections::HashSet<_> = c.topics.iter().flatten().collect();
        assert_eq!(all.len(), 50);
    }
}
