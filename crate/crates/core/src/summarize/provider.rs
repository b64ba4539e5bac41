//! Sentence-embedding and abstractive-summary providers.
//!
//! Two HTTP clients speak a minimal JSON protocol so external encoders and
//! seq2seq summarisers can be plugged in:
//!
//! * embedding: `POST {"texts": [..]}` answered by `{"vectors": [[..], ..]}`
//! * abstractive: `POST {"texts": [..]}` answered by `{"summary": ".."}`
//!
//! The offline defaults are [`HashingEmbedder`] and [`ConcatTruncate`].

use std::time::Duration;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{fnv1a, mix64};
use crate::text::tokenize;

pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;

    /// One vector of length [`EmbeddingProvider::dimension`] per text. The
    /// same text must always map to the same vector.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

pub trait AbstractiveProvider: Send + Sync {
    /// Condenses `texts` (in order) into at most `n_max` tokens.
    fn condense(&self, texts: &[String], n_max: usize) -> Result<Vec<String>>;
}

/// Signed feature hashing of a tweet's tokens into a fixed number of
/// dimensions.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashingEmbedder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(seed: u64) -> Self {
        Self {
            dim: Self::DEFAULT_DIM,
            seed,
        }
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let salt = mix64(self.seed);
        for tok in tokenize(text) {
            let h = mix64(fnv1a(tok.as_bytes()) ^ salt);
            let slot = (h % self.dim as u64) as usize;
            v[slot] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
        v
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Ordered concatenation of the texts' tokens, truncated to `n_max`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConcatTruncate;

impl AbstractiveProvider for ConcatTruncate {
    fn condense(&self, texts: &[String], n_max: usize) -> Result<Vec<String>> {
        Ok(texts.iter().flat_map(|t| tokenize(t)).take(n_max).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    pub url: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    2
}

impl HttpConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout_secs: default_timeout(),
            retries: default_retries(),
        }
    }
}

#[derive(Serialize)]
struct TextsRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct VectorsResponse {
    vectors: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct SummaryResponse {
    summary: String,
}

/// Blocking JSON client; `ureq::Agent` is safe to share across threads.
#[derive(Debug, Clone)]
struct JsonClient {
    agent: ureq::Agent,
    config: HttpConfig,
}

impl JsonClient {
    fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .build()
            .into();
        Self { agent, config }
    }

    fn post<T: DeserializeOwned>(&self, texts: &[String]) -> Result<T> {
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            match self
                .agent
                .post(&self.config.url)
                .send_json(TextsRequest { texts })
                .and_then(|mut r| r.body_mut().read_json::<T>())
            {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::debug!("{} attempt {} failed: {e}", self.config.url, attempt + 1);
                    last = e.to_string();
                }
            }
        }
        Err(Error::Provider(format!(
            "{} failed after {} attempts: {last}",
            self.config.url,
            self.config.retries + 1
        )))
    }
}

/// Sentence encoder behind an HTTP endpoint.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: JsonClient,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(config: HttpConfig, dim: usize) -> Self {
        Self {
            client: JsonClient::new(config),
            dim,
        }
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let resp: VectorsResponse = self.client.post(texts)?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::Provider(format!(
                "sent {} texts, received {} vectors",
                texts.len(),
                resp.vectors.len()
            )));
        }
        if let Some(v) = resp.vectors.iter().find(|v| v.len() != self.dim) {
            return Err(Error::Provider(format!(
                "expected dimension {}, received {}",
                self.dim,
                v.len()
            )));
        }
        Ok(resp.vectors)
    }
}

/// Abstractive summariser behind an HTTP endpoint.
#[derive(Debug, Clone)]
pub struct HttpAbstractive {
    client: JsonClient,
}

impl HttpAbstractive {
    pub fn new(config: HttpConfig) -> Self {
        Self {
            client: JsonClient::new(config),
        }
    }
}

impl AbstractiveProvider for HttpAbstractive {
    fn condense(&self, texts: &[String], n_max: usize) -> Result<Vec<String>> {
        let resp: SummaryResponse = self.client.post(texts)?;
        Ok(tokenize(&resp.summary).into_iter().take(n_max).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_deterministic_and_seeded() {
        let e = HashingEmbedder::new(3);
        let t = vec!["feeling low today".to_string(), "".to_string()];
        let a = e.embed(&t).unwrap();
        assert_eq!(a, e.embed(&t).unwrap());
        assert_eq!(a[0].len(), 64);
        assert_eq!(a[0].iter().map(|v| v.abs()).sum::<f64>(), 3.0);
        assert!(a[1].iter().all(|&v| v == 0.0));
        assert_ne!(a[0], HashingEmbedder::new(4).embed(&t).unwrap()[0]);
    }

    #[test]
    fn concat_truncates() {
        let texts = vec!["a b c".to_string(), "d e f".to_string()];
        assert_eq!(ConcatTruncate.condense(&texts, 100).unwrap().len(), 6);
        assert_eq!(ConcatTruncate.condense(&texts, 4).unwrap(), ["a", "b", "c", "d"]);
    }
}
