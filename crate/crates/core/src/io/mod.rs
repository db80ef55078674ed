//! File formats, run configuration, provenance and synthetic scenes.

mod config;
mod files;
mod preview;
mod provenance;
mod synth;

use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::Result;

pub use config::{GridSpec, PsfMethod, PsfSpec, RunConfig};
pub use files::{
    load_cube, load_measurement, load_psf_stack, read_sidecar, save_cube, save_measurement, save_psf_stack, ArrayKind,
    PsfMeta, Sidecar, CREATOR,
};
pub use preview::{save_cube_preview, save_measurement_preview, PreviewInfo, COLORMAP};
pub use provenance::{hash_json, hash_psf, provenance_path, write_provenance, InputRecord, Provenance};
pub use synth::{synth_scene, synth_scene_with, SceneKind, SynthOptions};

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// `<path>.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
