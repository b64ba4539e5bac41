//! TOML run configuration. Relative paths resolve against the directory of
//! the config file; command-line flags override every value here.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use depnet::harness::RunConfig;
use depnet::layers::WordVectors;
use depnet::lexicon::Lexicons;
use depnet::pipeline::{Providers, Resources};
use depnet::summarize::{HttpAbstractive, HttpConfig, HttpEmbedder, Metric};
use serde::{Deserialize, Serialize};

pub const EMBEDDER_URL_ENV: &str = "DEPNET_EMBEDDER_URL";
pub const CONDENSER_URL_ENV: &str = "DEPNET_CONDENSER_URL";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Timeline JSONL.
    pub data: Option<PathBuf>,
    /// Lexicon directory.
    pub lexicons: Option<PathBuf>,
    /// word2vec text file.
    pub embeddings: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSettings {
    pub embedder: Option<HttpConfig>,
    /// Vector width the embedding service returns.
    pub embedding_dim: usize,
    pub condenser: Option<HttpConfig>,
    pub metric: Metric,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        Self {
            embedder: None,
            embedding_dim: 64,
            condenser: None,
            metric: Metric::Euclidean,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub providers: ProviderSettings,
    pub run: RunConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.paths.data,
            &mut cfg.paths.lexicons,
            &mut cfg.paths.embeddings,
            &mut cfg.paths.checkpoint_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Input paths must exist; the checkpoint directory is created on
    /// demand.
    pub fn validate(&self) -> Result<()> {
        let inputs = [
            ("data", &self.paths.data),
            ("lexicons", &self.paths.lexicons),
            ("embeddings", &self.paths.embeddings),
        ];
        for (key, path) in inputs {
            if let Some(p) = path {
                if !p.exists() {
                    bail!(missing(p, &format!("paths.{key}")));
                }
            }
        }
        self.run.validate()?;
        Ok(())
    }

    /// Applies the provider URL environment overrides.
    pub fn apply_env(&mut self) {
        let set = |slot: &mut Option<HttpConfig>, var: &str| {
            if let Ok(url) = env::var(var) {
                match slot {
                    Some(c) => c.url = url,
                    None => *slot = Some(HttpConfig::new(url)),
                }
            }
        };
        set(&mut self.providers.embedder, EMBEDDER_URL_ENV);
        set(&mut self.providers.condenser, CONDENSER_URL_ENV);
    }

    pub fn providers(&self) -> Providers {
        let mut p = Providers::offline(self.run.seed);
        if let Some(c) = &self.providers.embedder {
            p.embedder = Arc::new(HttpEmbedder::new(c.clone(), self.providers.embedding_dim));
        }
        if let Some(c) = &self.providers.condenser {
            p.condenser = Arc::new(HttpAbstractive::new(c.clone()));
        }
        p.metric = self.providers.metric;
        p
    }

    pub fn resources(&self, lexicons: &Path) -> Result<Resources> {
        let lex = Lexicons::load(lexicons).with_context(|| format!("loading lexicons from {}", lexicons.display()))?;
        let mut res = Resources::new(lex, self.run.seed);
        res.providers = self.providers();
        if let Some(path) = &self.paths.embeddings {
            let wv = WordVectors::load(path)?;
            if wv.dim != self.run.model.embed_dim {
                bail!(
                    "{} holds {}-dimensional vectors but model.embed_dim is {}",
                    path.display(),
                    wv.dim,
                    self.run.model.embed_dim
                );
            }
            res.word_vectors = Some(Arc::new(wv));
        }
        Ok(res)
    }
}

/// Error text for a path that does not exist.
pub fn missing(path: &Path, what: &str) -> MissingPath {
    MissingPath {
        path: path.to_path_buf(),
        what: what.to_string(),
    }
}

#[derive(Debug)]
pub struct MissingPath {
    pub path: PathBuf,
    pub what: String,
}

impl std::fmt::Display for MissingPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: no such file or directory ({})", self.path.display(), self.what)
    }
}

impl std::error::Error for MissingPath {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("[run]\nepochs = 3\nepoch = 4\n").is_err());
        assert!(toml::from_str::<PipelineConfig>("[paths]\ndatta = \"x\"\n").is_err());
        let cfg: PipelineConfig = toml::from_str("[run]\nepochs = 3\n[run.model]\nfilters = 8\n").unwrap();
        assert_eq!(cfg.run.epochs, 3);
        assert_eq!(cfg.run.model.filters, 8);
        assert_eq!(cfg.run.batch_size, 16);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "[paths]\ndata = \"users.jsonl\"\n").unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.paths.data.as_deref(), Some(dir.path().join("users.jsonl").as_path()));
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("users.jsonl") && err.contains("paths.data"), "{err}");
    }
}
