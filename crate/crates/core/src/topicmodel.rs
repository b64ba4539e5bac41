//! Latent Dirichlet Allocation fitted by collapsed Gibbs sampling.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdaConfig {
    pub topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iters: usize,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self {
            topics: 5,
            alpha: 0.1,
            beta: 0.01,
            iters: 500,
            seed: 0,
        }
    }
}

/// A fitted topic model. `phi` is `K x V`, `theta` is `D x K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub config: LdaConfig,
    pub vocab: Vec<String>,
    pub phi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    /// Corpus log-likelihood `ln p(w | z)` after each sweep.
    pub log_likelihood: Vec<f64>,
}

/// Sampler state: token-topic assignments and the three count tables.
pub struct GibbsSampler {
    config: LdaConfig,
    vocab: Vec<String>,
    docs: Vec<Vec<usize>>,
    assignments: Vec<Vec<usize>>,
    doc_topic: Vec<Vec<u32>>,
    topic_word: Vec<Vec<u32>>,
    topic_total: Vec<u32>,
    rng: ChaCha8Rng,
}

impl GibbsSampler {
    pub fn new(docs: &[Vec<String>], config: LdaConfig) -> Result<Self> {
        if config.topics == 0 {
            return Err(Error::Topic("need at least one topic".into()));
        }
        if !(config.alpha > 0.0 && config.beta > 0.0) {
            return Err(Error::Topic("alpha and beta must be positive".into()));
        }
        if docs.is_empty() {
            return Err(Error::Topic("empty corpus".into()));
        }
        if let Some(i) = docs.iter().position(Vec::is_empty) {
            return Err(Error::Topic(format!("document {i} is empty")));
        }
        let vocab: Vec<String> = docs
            .iter()
            .flatten()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if vocab.is_empty() {
            return Err(Error::Topic("empty vocabulary".into()));
        }
        let index = |w: &String| vocab.binary_search(w).expect("word in vocab");
        let docs: Vec<Vec<usize>> = docs.iter().map(|d| d.iter().map(index).collect()).collect();

        let k = config.topics;
        let mut rng = rng_for(config.seed, "lda");
        let mut doc_topic = vec![vec![0u32; k]; docs.len()];
        let mut topic_word = vec![vec![0u32; vocab.len()]; k];
        let mut topic_total = vec![0u32; k];
        let assignments = docs
            .iter()
            .enumerate()
            .map(|(d, doc)| {
                doc.iter()
                    .map(|&w| {
                        let z = rng.random_range(0..k);
                        doc_topic[d][z] += 1;
                        topic_word[z][w] += 1;
                        topic_total[z] += 1;
                        z
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            config,
            vocab,
            docs,
            assignments,
            doc_topic,
            topic_word,
            topic_total,
            rng,
        })
    }

    /// One full pass resampling every token's topic.
    pub fn sweep(&mut self) {
        let k = self.config.topics;
        let v_beta = self.vocab.len() as f64 * self.config.beta;
        let (alpha, beta) = (self.config.alpha, self.config.beta);
        let mut weights = vec![0.0; k];
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let w = self.docs[d][i];
                let old = self.assignments[d][i];
                self.doc_topic[d][old] -= 1;
                self.topic_word[old][w] -= 1;
                self.topic_total[old] -= 1;

                let mut total = 0.0;
                for (z, slot) in weights.iter_mut().enumerate() {
                    total += (f64::from(self.doc_topic[d][z]) + alpha) * (f64::from(self.topic_word[z][w]) + beta)
                        / (f64::from(self.topic_total[z]) + v_beta);
                    *slot = total;
                }
                let u = self.rng.random::<f64>() * total;
                let new = weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                self.assignments[d][i] = new;
                self.doc_topic[d][new] += 1;
                self.topic_word[new][w] += 1;
                self.topic_total[new] += 1;
            }
        }
    }

    /// Sum of the topic-word count table.
    pub fn assigned_tokens(&self) -> u64 {
        self.topic_word.iter().flatten().map(|&c| u64::from(c)).sum()
    }

    pub fn corpus_tokens(&self) -> u64 {
        self.docs.iter().map(|d| d.len() as u64).sum()
    }

    /// `ln p(w | z)` with `phi` integrated out.
    pub fn log_likelihood(&self) -> f64 {
        let v = self.vocab.len() as f64;
        let beta = self.config.beta;
        let mut ll = 0.0;
        for (z, row) in self.topic_word.iter().enumerate() {
            ll += ln_gamma(v * beta) - ln_gamma(f64::from(self.topic_total[z]) + v * beta);
            for &c in row {
                if c > 0 {
                    ll += ln_gamma(f64::from(c) + beta) - ln_gamma(beta);
                }
            }
        }
        ll
    }

    pub fn into_model(self, log_likelihood: Vec<f64>) -> TopicModel {
        let k = self.config.topics;
        let (alpha, beta) = (self.config.alpha, self.config.beta);
        let v = self.vocab.len();
        let phi = self
            .topic_word
            .iter()
            .zip(&self.topic_total)
            .map(|(row, &total)| {
                let denom = f64::from(total) + v as f64 * beta;
                row.iter().map(|&c| (f64::from(c) + beta) / denom).collect()
            })
            .collect();
        let theta = self
            .doc_topic
            .iter()
            .zip(&self.docs)
            .map(|(row, doc)| {
                let denom = doc.len() as f64 + k as f64 * alpha;
                row.iter().map(|&c| (f64::from(c) + alpha) / denom).collect()
            })
            .collect();
        TopicModel {
            config: self.config,
            vocab: self.vocab,
            phi,
            theta,
            log_likelihood,
        }
    }
}

/// Runs `config.iters` sweeps from a seeded random initialisation.
pub fn fit(docs: &[Vec<String>], config: LdaConfig) -> Result<TopicModel> {
    let mut sampler = GibbsSampler::new(docs, config)?;
    let mut ll = Vec::with_capacity(config.iters);
    for _ in 0..config.iters {
        sampler.sweep();
        ll.push(sampler.log_likelihood());
    }
    Ok(sampler.into_model(ll))
}

impl TopicModel {
    pub fn topics(&self) -> usize {
        self.phi.len()
    }

    /// The `n` most probable words of `topic`, ties broken lexicographically.
    pub fn top_words(&self, topic: usize, n: usize) -> Result<Vec<String>> {
        if topic >= self.topics() {
            return Err(Error::Topic(format!("topic {topic} out of range 0..{}", self.topics())));
        }
        if n > self.vocab.len() {
            return Err(Error::Topic(format!(
                "asked for {n} words from a vocabulary of {}",
                self.vocab.len()
            )));
        }
        let row = &self.phi[topic];
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then_with(|| self.vocab[a].cmp(&self.vocab[b])));
        Ok(idx.into_iter().take(n).map(|i| self.vocab[i].clone()).collect())
    }

    /// Top `per_topic` words of every topic concatenated in topic order
    /// (`K * per_topic` entries, duplicates kept). Clamps `per_topic` to the
    /// vocabulary size.
    pub fn topic_words(&self, per_topic: usize) -> Vec<String> {
        let n = per_topic.min(self.vocab.len());
        (0..self.topics())
            .flat_map(|k| self.top_words(k, n).expect("topic in range"))
            .collect()
    }
}
