//! User timelines: JSON Lines ingestion, the dataset filters, and
//! deterministic holdout / k-fold partitions.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::seed::rng_for;

pub const DEFAULT_MIN_POSTS: usize = 10;
pub const DEFAULT_MAX_FOLLOWERS: u64 = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Depressed,
    NonDepressed,
}

impl Label {
    /// Position in the model's `(p_depressed, p_non_depressed)` output.
    pub fn class_index(self) -> usize {
        match self {
            Label::Depressed => 0,
            Label::NonDepressed => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Depressed => "depressed",
            Label::NonDepressed => "non_depressed",
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(match self {
            Label::Depressed => 1,
            Label::NonDepressed => 0,
        })
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match u8::deserialize(d)? {
            1 => Ok(Label::Depressed),
            0 => Ok(Label::NonDepressed),
            other => Err(serde::de::Error::custom(format!("label must be 0, 1 or null, got {other}"))),
        }
    }
}

mod timestamp {
    use super::*;

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        parse(&raw).map_err(serde::de::Error::custom)
    }

    /// RFC 3339 with any offset, or a naive `YYYY-MM-DDTHH:MM:SS` taken as UTC.
    /// Sub-second precision is dropped.
    pub fn parse(raw: &str) -> Result<DateTime<Utc>, String> {
        let parsed = DateTime::parse_from_rfc3339(raw)
            .map(|t| t.with_timezone(&Utc))
            .or_else(|_| {
                NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S%.f")
                    .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S%.f"))
                    .map(|n| n.and_utc())
            })
            .map_err(|_| format!("unparseable timestamp {raw:?}"))?;
        DateTime::from_timestamp(parsed.timestamp(), 0).ok_or_else(|| format!("timestamp out of range {raw:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tweet {
    pub id: String,
    pub text: String,
    #[serde(with = "timestamp")]
    pub created_at: DateTime<Utc>,
    pub is_retweet: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserRecord {
    pub user_id: String,
    #[serde(default)]
    pub label: Option<Label>,
    pub followers_count: u64,
    pub friends_count: u64,
    pub tweets: Vec<Tweet>,
}

impl UserRecord {
    /// Sorts tweets ascending by timestamp, ties by id.
    pub fn sort_tweets(&mut self) {
        self.tweets
            .sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
    }

    pub fn require_label(&self) -> Result<Label> {
        self.label.ok_or_else(|| Error::Unlabeled(self.user_id.clone()))
    }
}

pub fn parse_timestamp(raw: &str) -> Result<DateTime<Utc>, String> {
    timestamp::parse(raw)
}

/// Reads one user per line. Blank lines are skipped; line numbers in errors
/// are 1-based.
pub fn load_timelines(path: &Path) -> Result<Vec<UserRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    read_timelines(BufReader::new(file))
}

pub fn read_timelines(reader: impl BufRead) -> Result<Vec<UserRecord>> {
    let mut users = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut user: UserRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(t) = user.tweets.iter().find(|t| t.text.trim().is_empty()) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("tweet {:?} has empty text", t.id),
            });
        }
        if !seen.insert(user.user_id.clone()) {
            return Err(Error::DuplicateUser {
                line: line_no,
                user_id: user.user_id,
            });
        }
        user.sort_tweets();
        users.push(user);
    }
    Ok(users)
}

pub fn write_timelines(path: &Path, users: &[UserRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut out = BufWriter::new(file);
    for u in users {
        serde_json::to_writer(&mut out, u)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Keeps users with at least `min_posts` tweets and at most `max_followers`
/// followers, preserving order.
pub fn filter_users(users: Vec<UserRecord>, min_posts: usize, max_followers: u64) -> Vec<UserRecord> {
    users
        .into_iter()
        .filter(|u| u.tweets.len() >= min_posts && u.followers_count <= max_followers)
        .collect()
}

/// Decides whether a user writes in English.
pub trait LanguagePredicate {
    fn is_english(&self, user: &UserRecord) -> bool;
}

/// Accepts a user when at least `min_fraction` of the alphabetic characters
/// across all tweets are ASCII letters. Users with no letters are rejected.
/// A crude stand-in for a proper language identifier.
#[derive(Debug, Clone, Copy)]
pub struct AsciiLetterHeuristic {
    pub min_fraction: f64,
}

impl Default for AsciiLetterHeuristic {
    fn default() -> Self {
        Self { min_fraction: 0.6 }
    }
}

impl LanguagePredicate for AsciiLetterHeuristic {
    fn is_english(&self, user: &UserRecord) -> bool {
        let (mut ascii, mut letters) = (0usize, 0usize);
        for c in user.tweets.iter().flat_map(|t| t.text.chars()) {
            if c.is_alphabetic() {
                letters += 1;
                if c.is_ascii_alphabetic() {
                    ascii += 1;
                }
            }
        }
        letters > 0 && ascii as f64 / letters as f64 >= self.min_fraction
    }
}

pub fn retain_language(users: Vec<UserRecord>, predicate: &dyn LanguagePredicate) -> Vec<UserRecord> {
    users.into_iter().filter(|u| predicate.is_english(u)).collect()
}

/// Seeded holdout split. `|train| = round(train_fraction * N)`; both parts
/// keep the input order.
pub fn split(users: &[UserRecord], train_fraction: f64, seed: u64) -> Result<(Vec<UserRecord>, Vec<UserRecord>)> {
    if users.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "split needs at least 2 users, got {}",
            users.len()
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = (train_fraction * users.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..users.len()).collect();
    order.shuffle(&mut rng_for(seed, "split"));
    let mut in_train = vec![false; users.len()];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = users.iter().cloned().zip(in_train).partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(u, _)| u).collect(),
        test.into_iter().map(|(u, _)| u).collect(),
    ))
}

/// A k-fold partition of user ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Splits `users` into `(training portion, held-out fold)` for fold `i`.
    pub fn partition(&self, users: &[UserRecord], i: usize) -> (Vec<UserRecord>, Vec<UserRecord>) {
        let held: HashSet<&str> = self.folds[i].iter().map(String::as_str).collect();
        users.iter().cloned().partition(|u| !held.contains(u.user_id.as_str()))
    }
}

/// Shuffles user ids with `seed` and deals them into `k` folds; the first
/// `N mod k` folds get one extra user.
pub fn kfold(users: &[UserRecord], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if users.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} users cannot fill {k} folds",
            users.len()
        )));
    }
    let mut ids: Vec<String> = users.iter().map(|u| u.user_id.clone()).collect();
    ids.shuffle(&mut rng_for(seed, "kfold"));
    let (base, extra) = (ids.len() / k, ids.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut rest = ids.as_slice();
    for i in 0..k {
        let size = base + usize::from(i < extra);
        let (head, tail) = rest.split_at(size);
        folds.push(head.to_vec());
        rest = tail;
    }
    Ok(FoldPlan { seed, folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(id: &str, n_tweets: usize, followers: u64) -> UserRecord {
        UserRecord {
            user_id: id.into(),
            label: Some(Label::Depressed),
            followers_count: followers,
            friends_count: 3,
            tweets: (0..n_tweets)
                .map(|i| Tweet {
                    id: format!("{id}-{i}"),
                    text: "hello there".into(),
                    created_at: DateTime::from_timestamp(1_600_000_000 + i as i64 * 60, 0).unwrap(),
                    is_retweet: false,
                })
                .collect(),
        }
    }

    fn users(n: usize) -> Vec<UserRecord> {
        (0..n).map(|i| user(&format!("u{i}"), 1, 0)).collect()
    }

    #[test]
    fn loads_and_sorts_tweets() {
        let data = r#"{"user_id":"a","label":1,"followers_count":5,"friends_count":2,"tweets":[{"id":"2","text":"later","created_at":"2021-01-02T00:00:00Z","is_retweet":false},{"id":"1","text":"earlier","created_at":"2021-01-01T00:00:00+02:00","is_retweet":true}]}
{"user_id":"b","label":null,"followers_count":0,"friends_count":0,"tweets":[]}
"#;
        let users = read_timelines(data.as_bytes()).unwrap();
        assert_eq!(users.len(), 2);
        assert_eq!(users[0].tweets[0].id, "1");
        assert_eq!(users[0].tweets[0].created_at.to_rfc3339(), "2020-12-31T22:00:00+00:00");
        assert_eq!(users[0].label, Some(Label::Depressed));
        assert_eq!(users[1].label, None);
    }

    #[test]
    fn timestamp_ties_break_by_id() {
        let mut u = user("a", 0, 0);
        let t = DateTime::from_timestamp(100, 0).unwrap();
        for id in ["b", "a", "c"] {
            u.tweets.push(Tweet {
                id: id.into(),
                text: "x".into(),
                created_at: t,
                is_retweet: false,
            });
        }
        u.sort_tweets();
        let ids: Vec<_> = u.tweets.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(read_timelines("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn missing_field_cites_line() {
        let ok = r#"{"user_id":"a","label":0,"followers_count":1,"friends_count":1,"tweets":[]}"#;
        let bad = r#"{"label":0,"followers_count":1,"friends_count":1,"tweets":[]}"#;
        let ok2 = ok.replace("\"a\"", "\"b\"");
        let data = format!("{ok}\n{ok2}\n{bad}\n");
        let err = read_timelines(data.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(err.to_string().contains("user_id"), "{err}");
    }

    #[test]
    fn duplicate_and_malformed_lines() {
        let ok = r#"{"user_id":"a","label":0,"followers_count":1,"friends_count":1,"tweets":[]}"#;
        let err = read_timelines(format!("{ok}\n{ok}\n").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::DuplicateUser { line: 2, .. }));
        let err = read_timelines("{not json\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let bad_label = ok.replace("\"label\":0", "\"label\":2");
        assert!(read_timelines(bad_label.as_bytes()).is_err());
    }

    #[test]
    fn filter_boundaries() {
        let kept = filter_users(
            vec![user("nine", 9, 0), user("ten", 10, 5000), user("many", 12, 5001)],
            DEFAULT_MIN_POSTS,
            DEFAULT_MAX_FOLLOWERS,
        );
        let ids: Vec<_> = kept.iter().map(|u| u.user_id.as_str()).collect();
        assert_eq!(ids, ["ten"]);
    }

    #[test]
    fn ascii_heuristic() {
        let mut u = user("a", 1, 0);
        assert!(AsciiLetterHeuristic::default().is_english(&u));
        u.tweets[0].text = "привет мир hi".into();
        assert!(!AsciiLetterHeuristic::default().is_english(&u));
        u.tweets[0].text = "1234 😀".into();
        assert!(!AsciiLetterHeuristic::default().is_english(&u));
    }

    #[test]
    fn split_cardinality_and_rounding() {
        let (tr, te) = split(&users(10), 0.8, 7).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let ids: HashSet<_> = tr.iter().chain(&te).map(|u| u.user_id.clone()).collect();
        assert_eq!(ids.len(), 10);
        let (tr, te) = split(&users(5), 0.8, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (4, 1));
        assert_eq!(split(&users(10), 0.8, 7).unwrap(), split(&users(10), 0.8, 7).unwrap());
        assert!(split(&users(1), 0.8, 7).is_err());
        assert!(split(&users(4), 1.0, 7).is_err());
    }

    #[test]
    fn kfold_sizes() {
        let plan = kfold(&users(10), 5, 3).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 2));
        let plan = kfold(&users(11), 5, 3).unwrap();
        let sizes: Vec<_> = plan.folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, [3, 2, 2, 2, 2]);
        assert!(kfold(&users(3), 5, 3).is_err());
        assert!(kfold(&users(3), 1, 3).is_err());
    }

    #[test]
    fn fold_partition_excludes_held_out() {
        let all = users(7);
        let plan = kfold(&all, 3, 9).unwrap();
        for i in 0..3 {
            let (train, test) = plan.partition(&all, i);
            assert_eq!(train.len() + test.len(), 7);
            assert!(train.iter().all(|u| !plan.folds[i].contains(&u.user_id)));
        }
    }
}
