use std::collections::HashMap;
use std::ops::Index;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Graph, Tensor, Var};
use crate::error::{param_err, AdisError, Result};
use crate::io::write_atomic;

const CHECKPOINT_FORMAT: &str = "adis-checkpoint-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    lookup: HashMap<String, usize>,
}

/// Graph leaves for every parameter of a store, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl Bound {
    /// Wraps leaves created elsewhere, in store order.
    pub fn from_vars(vars: &[Var]) -> Self {
        Self(vars.to_vec())
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return param_err(format!("duplicate parameter name '{name}'"));
        }
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Adds every parameter to `g` as a gradient-carrying leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.tensors.iter().map(|t| g.variable(t.clone())).collect())
    }

    /// Adds every parameter to `g` as a constant.
    pub fn bind_constants(&self, g: &mut Graph) -> Bound {
        Bound(self.tensors.iter().map(|t| g.constant(t.clone())).collect())
    }

    /// Copies values from `other`, which must hold the same names and shapes.
    pub fn assign_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(AdisError::Data(
                "checkpoint parameter names do not match the model".into(),
            ));
        }
        for (i, (a, b)) in self.tensors.iter().zip(&other.tensors).enumerate() {
            if a.shape() != b.shape() {
                return Err(AdisError::Data(format!(
                    "parameter '{}' has shape {:?}, checkpoint has {:?}",
                    self.names[i],
                    a.shape(),
                    b.shape()
                )));
            }
        }
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data file.
    pub offset: usize,
}

/// JSON side of a checkpoint; values live in a flat little-endian `f64` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub dtype: String,
    pub data_file: String,
    pub data_sha256: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn save_checkpoint(store: &ParamStore, meta: serde_json::Value, stem: &Path) -> Result<CheckpointManifest> {
    let (json_path, bin_path) = paths(stem);
    let mut bytes = Vec::with_capacity(store.num_values() * 8);
    let mut tensors = Vec::with_capacity(store.len());
    for (name, t) in store.names.iter().zip(&store.tensors) {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: bytes.len(),
        });
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        dtype: "f64-le".into(),
        data_file: bin_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        data_sha256: hex::encode(Sha256::digest(&bytes)),
        tensors,
        meta,
    };
    write_atomic(&bin_path, &bytes)?;
    write_atomic(&json_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(stem: &Path) -> Result<(ParamStore, CheckpointManifest)> {
    let (json_path, _) = paths(stem);
    let manifest: CheckpointManifest = serde_json::from_slice(&std::fs::read(&json_path)?)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.dtype != "f64-le" {
        return Err(AdisError::Data(format!(
            "unsupported checkpoint format {} / {}",
            manifest.format, manifest.dtype
        )));
    }
    let bin_path = json_path.with_file_name(&manifest.data_file);
    let bytes = std::fs::read(&bin_path)?;
    if hex::encode(Sha256::digest(&bytes)) != manifest.data_sha256 {
        return Err(AdisError::Data(format!("{} fails its checksum", bin_path.display())));
    }
    let mut store = ParamStore::new();
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        let end = e.offset + 8 * n;
        if end > bytes.len() {
            return Err(AdisError::Data(format!("tensor '{}' runs past the data file", e.name)));
        }
        let data = bytes[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.add(e.name.clone(), Tensor::new(e.shape.clone(), data)?)?;
    }
    Ok((store, manifest))
}
