//! Parameter checkpoints: `params.bin` holds every value as little-endian
//! `f64` in declaration order, `manifest.json` holds names, shapes, seed
//! and optimizer step count.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub seed: u64,
    pub step: u64,
    pub params: Vec<ParamEntry>,
}

impl CheckpointManifest {
    pub fn describe(store: &ParamStore, seed: u64, step: u64) -> Self {
        Self {
            seed,
            step,
            params: store
                .ids()
                .map(|id| ParamEntry {
                    name: store.name(id).to_string(),
                    shape: store.get(id).shape().to_vec(),
                    trainable: store.is_trainable(id),
                })
                .collect(),
        }
    }
}

pub fn save_checkpoint(dir: &Path, store: &ParamStore, seed: u64, step: u64) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(fs::File::create(dir.join(PARAMS_FILE))?);
    for id in store.ids() {
        for v in store.get(id).data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    let manifest = CheckpointManifest::describe(store, seed, step);
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads values into `store`, whose declared names and shapes must match the
/// manifest exactly.
pub fn load_checkpoint(dir: &Path, store: &mut ParamStore) -> Result<CheckpointManifest> {
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.params.len() != store.len() {
        return Err(TensorError::Checkpoint(format!(
            "manifest lists {} parameters, model declares {}",
            manifest.params.len(),
            store.len()
        )));
    }
    let bytes = fs::read(dir.join(PARAMS_FILE))?;
    let expected: usize = manifest.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if bytes.len() != expected * 8 {
        return Err(TensorError::Checkpoint(format!(
            "{PARAMS_FILE} holds {} bytes, manifest needs {}",
            bytes.len(),
            expected * 8
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for (id, entry) in store.ids().collect::<Vec<_>>().into_iter().zip(&manifest.params) {
        if store.name(id) != entry.name || store.get(id).shape() != entry.shape.as_slice() {
            return Err(TensorError::Checkpoint(format!(
                "parameter {} {:?} does not match model's {} {:?}",
                entry.name,
                entry.shape,
                store.name(id),
                store.get(id).shape()
            )));
        }
        let n = entry.shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        store.set(id, Tensor::from_vec(entry.shape.clone(), data)?)?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ParamStore::new();
        s.add("a", Tensor::matrix(2, 2, vec![1.0, -2.5, 3.25, 1e-300]).unwrap());
        s.add_frozen("emb", Tensor::row(vec![0.1, 0.2, 0.3]).unwrap());
        let m = save_checkpoint(dir.path(), &s, 42, 7).unwrap();
        assert_eq!(m.step, 7);
        assert_eq!(fs::metadata(dir.path().join(PARAMS_FILE)).unwrap().len(), 7 * 8);

        let mut fresh = ParamStore::new();
        fresh.add("a", Tensor::zeros(&[2, 2]));
        fresh.add_frozen("emb", Tensor::zeros(&[1, 3]));
        let loaded = load_checkpoint(dir.path(), &mut fresh).unwrap();
        assert_eq!(loaded, m);
        for id in s.ids() {
            assert_eq!(s.get(id).data(), fresh.get(id).data());
        }

        let mut wrong = ParamStore::new();
        wrong.add("a", Tensor::zeros(&[4, 1]));
        wrong.add("emb", Tensor::zeros(&[1, 3]));
        assert!(load_checkpoint(dir.path(), &mut wrong).is_err());
    }
}
