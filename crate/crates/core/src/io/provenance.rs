use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{sha256_hex, write_atomic, CREATOR};
use crate::error::Result;
use crate::optics::PsfStack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

impl InputRecord {
    /// Hashes the file at `path`.
    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_hex(&std::fs::read(path)?),
        })
    }
}

/// What produced an artifact: the command, its resolved configuration and
/// hashes of everything it read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub creator: String,
    pub command: String,
    pub config: serde_json::Value,
    pub config_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psf_sha256: Option<String>,
    #[serde(default)]
    pub inputs: Vec<InputRecord>,
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Provenance {
    pub fn new(command: &str, config: &impl Serialize) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        Ok(Self {
            creator: CREATOR.into(),
            command: command.into(),
            config_sha256: hash_json(&config)?,
            config,
            psf_sha256: None,
            inputs: Vec::new(),
            extra: Default::default(),
        })
    }
}

/// SHA-256 of the compact JSON serialisation. Object keys come out sorted
/// because `serde_json::Map` is a BTreeMap here.
pub fn hash_json(value: &serde_json::Value) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(value)?.as_bytes()))
}

/// Hash over the wavelengths, pixel pitch and kernel values.
pub fn hash_psf(stack: &PsfStack) -> String {
    let mut h = Sha256::new();
    for l in stack.grid().lambdas() {
        h.update(l.to_le_bytes());
    }
    h.update(stack.pixel_pitch().to_le_bytes());
    h.update((stack.side() as u64).to_le_bytes());
    for v in stack.kernels().iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// `<artifact>.provenance.json`.
pub fn provenance_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".provenance.json");
    PathBuf::from(s)
}

pub fn write_provenance(artifact: &Path, prov: &Provenance) -> Result<PathBuf> {
    let p = provenance_path(artifact);
    write_atomic(&p, serde_json::to_string_pretty(prov)?.as_bytes())?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::RunConfig;

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = Provenance::new("simulate", &RunConfig::default()).unwrap();
        let b = Provenance::new("simulate", &RunConfig::default()).unwrap();
        assert_eq!(a.config_sha256, b.config_sha256);
        let cfg = RunConfig {
            seed: 1,
            ..RunConfig::default()
        };
        let c = Provenance::new("simulate", &cfg).unwrap();
        assert_ne!(a.config_sha256, c.config_sha256);
        let back: RunConfig = serde_json::from_value(a.config.clone()).unwrap();
        assert_eq!(back, RunConfig::default());
    }
}
