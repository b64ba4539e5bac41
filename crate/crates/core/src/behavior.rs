//! The four behaviour modalities: social network, emotional,
//! domain-specific and topic features.

use chrono::Timelike;
use serde::{Deserialize, Serialize};

use crate::corpus::UserRecord;
use crate::error::{Error, Result};
use crate::lexicon::{Lexicons, Polarity};
use crate::text::{emoji_key, is_emoji, tokenize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialVector {
    /// Tweets per UTC hour of day.
    pub posting_time_hist: [u64; 24],
    pub followers: u64,
    pub friends: u64,
    pub n_tweets: u64,
    pub n_retweets: u64,
    /// Mean tokens per tweet.
    pub mean_tweet_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionVector {
    /// Valence, arousal and dominance summed over every tweet.
    pub vad_sum: [f64; 3],
    /// Positive, neutral and negative emoji occurrences.
    pub emoji_counts: [u64; 3],
    pub fp_singular: u64,
    pub fp_plural: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainVector {
    pub symptom_counts: [u64; 9],
    pub antidepressant_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicVector {
    pub word_counts: Vec<u64>,
}

/// All four modality vectors for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorFeatures {
    pub user_id: String,
    pub social: SocialVector,
    pub emotional: EmotionVector,
    pub domain: DomainVector,
    pub topic: TopicVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Social,
    Emotional,
    Domain,
    Topic,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Social, Modality::Emotional, Modality::Domain, Modality::Topic];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short(self) -> &'static str {
        match self {
            Modality::Social => "S",
            Modality::Emotional => "E",
            Modality::Domain => "D",
            Modality::Topic => "T",
        }
    }
}

impl SocialVector {
    pub const DIM: usize = 29;

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.posting_time_hist.iter().map(|&c| c as f64).collect();
        v.extend([
            self.followers as f64,
            self.friends as f64,
            self.n_tweets as f64,
            self.n_retweets as f64,
            self.mean_tweet_len,
        ]);
        v
    }
}

impl EmotionVector {
    pub const DIM: usize = 8;

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.vad_sum.to_vec();
        v.extend(self.emoji_counts.iter().map(|&c| c as f64));
        v.extend([self.fp_singular as f64, self.fp_plural as f64]);
        v
    }
}

impl DomainVector {
    pub const DIM: usize = 10;

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.symptom_counts.iter().map(|&c| c as f64).collect();
        v.push(self.antidepressant_count as f64);
        v
    }
}

impl BehaviorFeatures {
    /// Flattened modality vectors in `[S, E, D, T]` order.
    pub fn modality_vectors(&self) -> [Vec<f64>; 4] {
        [
            self.social.to_vec(),
            self.emotional.to_vec(),
            self.domain.to_vec(),
            self.topic.word_counts.iter().map(|&c| c as f64).collect(),
        ]
    }
}

fn tokenized(user: &UserRecord) -> Vec<Vec<String>> {
    user.tweets.iter().map(|t| tokenize(&t.text)).collect()
}

pub fn social_features(user: &UserRecord) -> Result<SocialVector> {
    social_from_tokens(user, &tokenized(user))
}

fn social_from_tokens(user: &UserRecord, tokens: &[Vec<String>]) -> Result<SocialVector> {
    if user.tweets.is_empty() {
        return Err(Error::NoTweets(user.user_id.clone()));
    }
    let mut hist = [0u64; 24];
    for t in &user.tweets {
        hist[t.created_at.hour() as usize] += 1;
    }
    let total_tokens: usize = tokens.iter().map(Vec::len).sum();
    Ok(SocialVector {
        posting_time_hist: hist,
        followers: user.followers_count,
        friends: user.friends_count,
        n_tweets: user.tweets.len() as u64,
        n_retweets: user.tweets.iter().filter(|t| t.is_retweet).count() as u64,
        mean_tweet_len: total_tokens as f64 / user.tweets.len() as f64,
    })
}

pub fn emotional_features(user: &UserRecord, lex: &Lexicons) -> EmotionVector {
    emotional_from_tokens(&tokenized(user), lex)
}

fn emotional_from_tokens(tokens: &[Vec<String>], lex: &Lexicons) -> EmotionVector {
    let mut out = EmotionVector {
        vad_sum: [0.0; 3],
        emoji_counts: [0; 3],
        fp_singular: 0,
        fp_plural: 0,
    };
    for tweet in tokens {
        let mut tweet_vad = [0.0; 3];
        for tok in tweet {
            if let Some(v) = lex.vad.get(tok) {
                for (acc, x) in tweet_vad.iter_mut().zip(v) {
                    *acc += x;
                }
            }
            if is_emoji(tok) {
                match lex.emoji_polarity.get(&emoji_key(tok)) {
                    Some(Polarity::Positive) => out.emoji_counts[0] += 1,
                    Some(Polarity::Neutral) => out.emoji_counts[1] += 1,
                    Some(Polarity::Negative) => out.emoji_counts[2] += 1,
                    None => {}
                }
            }
            out.fp_singular += u64::from(lex.fp_singular.contains(tok));
            out.fp_plural += u64::from(lex.fp_plural.contains(tok));
        }
        for (acc, x) in out.vad_sum.iter_mut().zip(tweet_vad) {
            *acc += x;
        }
    }
    out
}

/// Occurrences of single tokens plus hyphen-joined adjacent bigrams that are
/// members of `list`.
fn count_matches(tokens: &[Vec<String>], list: &std::collections::HashSet<String>) -> u64 {
    let mut n = 0;
    for tweet in tokens {
        n += tweet.iter().filter(|t| list.contains(*t)).count() as u64;
        n += tweet
            .windows(2)
            .filter(|w| list.contains(&format!("{}-{}", w[0], w[1])))
            .count() as u64;
    }
    n
}

pub fn domain_features(user: &UserRecord, lex: &Lexicons) -> DomainVector {
    domain_from_tokens(&tokenized(user), lex)
}

fn domain_from_tokens(tokens: &[Vec<String>], lex: &Lexicons) -> DomainVector {
    let mut symptom_counts = [0u64; 9];
    for (slot, list) in symptom_counts.iter_mut().zip(&lex.symptoms) {
        *slot = count_matches(tokens, list);
    }
    DomainVector {
        symptom_counts,
        antidepressant_count: count_matches(tokens, &lex.antidepressants),
    }
}

pub fn topic_features(user: &UserRecord, topic_words: &[String]) -> Result<TopicVector> {
    topic_from_tokens(&tokenized(user), topic_words)
}

fn topic_from_tokens(tokens: &[Vec<String>], topic_words: &[String]) -> Result<TopicVector> {
    if topic_words.is_empty() {
        return Err(Error::InvalidArgument("topic word list is empty".into()));
    }
    let mut counts = std::collections::HashMap::<&str, u64>::new();
    for tok in tokens.iter().flatten() {
        *counts.entry(tok.as_str()).or_default() += 1;
    }
    Ok(TopicVector {
        word_counts: topic_words
            .iter()
            .map(|w| counts.get(w.as_str()).copied().unwrap_or(0))
            .collect(),
    })
}

/// Computes all four modalities, tokenising each tweet once.
pub fn extract_features(user: &UserRecord, lex: &Lexicons, topic_words: &[String]) -> Result<BehaviorFeatures> {
    let tokens = tokenized(user);
    Ok(BehaviorFeatures {
        user_id: user.user_id.clone(),
        social: social_from_tokens(user, &tokens)?,
        emotional: emotional_from_tokens(&tokens, lex),
        domain: domain_from_tokens(&tokens, lex),
        topic: topic_from_tokens(&tokens, topic_words)?,
    })
}
