//! Word embedding table with one trailing out-of-vocabulary row.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use depnet_tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

use super::Binder;
use crate::error::{Error, Result};
use crate::seed::rng_for;

const INIT_RANGE: f64 = 0.25;
const OOV_KEY: &str = "\u{0}oov";

/// Vectors read from a word2vec text file, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    pub words: Vec<String>,
    pub dim: usize,
    pub data: Vec<f64>,
}

/// Parses the word2vec text format: a `V E` header, then `word v1 .. vE`
/// per line.
pub fn read_word2vec(reader: impl BufRead) -> Result<WordVectors> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::WordVectors("empty file".into()))?;
    let bad_header = || Error::WordVectors(format!("line 1: expected `V E`, got {header:?}"));
    let mut parts = header.split_whitespace().map(str::parse::<usize>);
    let (count, dim) = match (parts.next(), parts.next(), parts.next()) {
        (Some(Ok(v)), Some(Ok(e)), None) if e > 0 => (v, e),
        _ => return Err(bad_header()),
    };
    let mut words = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 2;
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("non-blank line has a field");
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::WordVectors(format!("line {lineno}: unparsable value")))?;
        if values.len() != dim {
            return Err(Error::WordVectors(format!(
                "line {lineno}: {word:?} has {} values, header says {dim}",
                values.len()
            )));
        }
        words.push(word.to_string());
        data.extend(values);
    }
    if words.len() != count {
        return Err(Error::WordVectors(format!(
            "header announces {count} vectors, file has {}",
            words.len()
        )));
    }
    Ok(WordVectors { words, dim, data })
}

impl WordVectors {
    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        read_word2vec(std::io::BufReader::new(f))
    }
}

/// `[V + 1, E]` lookup table; row `V` stands for every unknown word.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub table: ParamId,
    pub words: Vec<String>,
    pub dim: usize,
    pub trainable: bool,
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct EmbeddingVars {
    table: ParamId,
    bound: Option<Var>,
}

fn random_row(seed: u64, key: &str, dim: usize) -> impl Iterator<Item = f64> {
    let mut rng = rng_for(seed, &format!("embedding:{key}"));
    (0..dim).map(move |_| rng.random_range(-INIT_RANGE..INIT_RANGE))
}

impl EmbeddingTable {
    fn register(store: &mut ParamStore, name: &str, t: Tensor, trainable: bool) -> ParamId {
        if trainable {
            store.add(name, t)
        } else {
            store.add_frozen(name, t)
        }
    }

    fn build(store: &mut ParamStore, name: &str, words: Vec<String>, dim: usize, data: Vec<f64>, trainable: bool) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let t = Tensor::matrix(words.len() + 1, dim, data).expect("table data matches its shape");
        let table = Self::register(store, name, t, trainable);
        Self {
            table,
            words,
            dim,
            trainable,
            index,
        }
    }

    /// Each row drawn uniformly from `[-0.25, 0.25)` with a seed derived from
    /// the word, so a word's vector does not depend on the rest of the
    /// vocabulary. Duplicate words are dropped.
    pub fn random(store: &mut ParamStore, name: &str, words: &[String], dim: usize, seed: u64, trainable: bool) -> Self {
        let mut seen = std::collections::HashSet::new();
        let words: Vec<String> = words.iter().filter(|w| seen.insert(w.as_str())).cloned().collect();
        let mut data = Vec::with_capacity((words.len() + 1) * dim);
        for w in &words {
            data.extend(random_row(seed, w, dim));
        }
        data.extend(random_row(seed, OOV_KEY, dim));
        Self::build(store, name, words, dim, data, trainable)
    }

    /// Pretrained rows; the unknown-word row is seeded random.
    pub fn from_vectors(store: &mut ParamStore, name: &str, wv: WordVectors, seed: u64, trainable: bool) -> Self {
        let WordVectors { words, dim, mut data } = wv;
        let mut seen = std::collections::HashSet::new();
        let keep: Vec<bool> = words.iter().map(|w| seen.insert(w.clone())).collect();
        if keep.iter().any(|k| !k) {
            let mut kept = Vec::with_capacity(data.len());
            for (row, _) in data.chunks(dim).zip(&keep).filter(|(_, &k)| k) {
                kept.extend_from_slice(row);
            }
            data = kept;
        }
        let words: Vec<String> = words.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(w, _)| w).collect();
        data.extend(random_row(seed, OOV_KEY, dim));
        Self::build(store, name, words, dim, data, trainable)
    }

    /// Zero-filled table for a known vocabulary, to be overwritten from a
    /// checkpoint.
    pub fn placeholder(store: &mut ParamStore, name: &str, words: Vec<String>, dim: usize, trainable: bool) -> Self {
        let data = vec![0.0; (words.len() + 1) * dim];
        Self::build(store, name, words, dim, data, trainable)
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn oov_id(&self) -> usize {
        self.words.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.oov_id())
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Gathers rows without touching a graph.
    pub fn lookup(&self, store: &ParamStore, ids: &[usize]) -> Tensor {
        let t = store.get(self.table);
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for &i in ids {
            data.extend_from_slice(t.row_slice(i));
        }
        Tensor::matrix(ids.len(), self.dim, data).expect("gathered rows match their shape")
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.table]
    }

    /// Frozen tables are not recorded on the graph; their rows enter as
    /// constants.
    pub fn bind(&self, g: &mut Graph, b: &mut dyn Binder) -> EmbeddingVars {
        EmbeddingVars {
            table: self.table,
            bound: self.trainable.then(|| b.bind(g, self.table)),
        }
    }
}

impl EmbeddingVars {
    /// `[ids.len(), E]` rows of the table.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("cannot embed an empty summary".into()));
        }
        match self.bound {
            Some(table) => Ok(g.embedding_lookup(table, ids)?),
            None => {
                let t = store.get(self.table);
                let (v, e) = (t.shape()[0], t.shape()[1]);
                if let Some(bad) = ids.iter().find(|&&i| i >= v) {
                    return Err(Error::InvalidArgument(format!("token id {bad} >= table rows {v}")));
                }
                let mut data = Vec::with_capacity(ids.len() * e);
                for &i in ids {
                    data.extend_from_slice(t.row_slice(i));
                }
                Ok(g.constant(Tensor::matrix(ids.len(), e, data)?))
            }
        }
    }
}
