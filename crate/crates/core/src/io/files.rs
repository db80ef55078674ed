//! Band-planar little-endian `f32` payloads with JSON sidecars.

use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::{sha256_hex, sidecar_path, write_atomic};
use crate::error::{AdisError, Result};
use crate::optics::PsfStack;
use crate::spectral::{HsiCube, Measurement, WavelengthGrid};

pub const CREATOR: &str = concat!("adis ", env!("CARGO_PKG_VERSION"));
const FORMAT: &str = "adis-raw-1";
const LAYOUT: &str = "band-planar (band, row, col)";
const DTYPE: &str = "f32-le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayKind {
    Cube,
    Measurement,
    Psf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsfMeta {
    pub pixel_pitch_m: f64,
    pub order_truncation: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format: String,
    pub kind: ArrayKind,
    /// `[K, H, W]` for cubes and PSF stacks, `[H, W]` for measurements.
    pub dims: Vec<usize>,
    pub layout: String,
    pub dtype: String,
    #[serde(default)]
    pub wavelengths_nm: Vec<f64>,
    pub units: String,
    pub creator: String,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psf: Option<PsfMeta>,
}

fn encode(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| (v as f32).to_le_bytes()).collect()
}

fn write_pair(path: &Path, payload: &[u8], mut sidecar: Sidecar) -> Result<()> {
    sidecar.sha256 = sha256_hex(payload);
    write_atomic(path, payload)?;
    write_atomic(&sidecar_path(path), serde_json::to_string_pretty(&sidecar)?.as_bytes())
}

fn sidecar(kind: ArrayKind, dims: Vec<usize>, grid: Option<&WavelengthGrid>, units: &str) -> Sidecar {
    Sidecar {
        format: FORMAT.into(),
        kind,
        dims,
        layout: LAYOUT.into(),
        dtype: DTYPE.into(),
        wavelengths_nm: grid
            .map(|g| g.lambdas().iter().map(|l| l * 1e9).collect())
            .unwrap_or_default(),
        units: units.into(),
        creator: CREATOR.into(),
        sha256: String::new(),
        psf: None,
    }
}

/// Reads and parses `<path>.json`.
pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let sp = sidecar_path(path);
    let text = std::fs::read(&sp).map_err(|e| AdisError::Data(format!("cannot read {}: {e}", sp.display())))?;
    serde_json::from_slice(&text).map_err(|e| AdisError::Data(format!("{}: {e}", sp.display())))
}

/// Reads a payload and checks it against its sidecar.
fn read_pair(path: &Path, kind: ArrayKind) -> Result<(Sidecar, Vec<f64>)> {
    let meta = read_sidecar(path)?;
    if meta.kind != kind {
        return Err(AdisError::Data(format!(
            "{} holds a {:?}, expected a {kind:?}",
            path.display(),
            meta.kind
        )));
    }
    if meta.format != FORMAT || meta.dtype != DTYPE {
        return Err(AdisError::Data(format!(
            "unsupported format {} / {}",
            meta.format, meta.dtype
        )));
    }
    let payload = std::fs::read(path).map_err(|e| AdisError::Data(format!("cannot read {}: {e}", path.display())))?;
    let n: usize = meta.dims.iter().product();
    if payload.len() != 4 * n {
        return Err(AdisError::Data(format!(
            "{}: payload is {} bytes, dims {:?} need {}",
            path.display(),
            payload.len(),
            meta.dims,
            4 * n
        )));
    }
    if sha256_hex(&payload) != meta.sha256 {
        return Err(AdisError::Data(format!("{}: checksum mismatch", path.display())));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok((meta, values))
}

fn grid_from(meta: &Sidecar) -> Result<WavelengthGrid> {
    WavelengthGrid::new(meta.wavelengths_nm.iter().map(|l| l * 1e-9).collect())
        .map_err(|e| AdisError::Data(format!("sidecar wavelengths: {e}")))
}

fn dims3(meta: &Sidecar) -> Result<(usize, usize, usize)> {
    match meta.dims[..] {
        [k, h, w] if k == meta.wavelengths_nm.len() => Ok((k, h, w)),
        _ => Err(AdisError::Data(format!(
            "dims {:?} inconsistent with {} wavelengths",
            meta.dims,
            meta.wavelengths_nm.len()
        ))),
    }
}

pub fn save_cube(cube: &HsiCube, path: &Path) -> Result<()> {
    let (k, h, w) = (cube.bands(), cube.height(), cube.width());
    let meta = sidecar(ArrayKind::Cube, vec![k, h, w], Some(cube.grid()), "relative radiance");
    write_pair(path, &encode(cube.data().iter().copied()), meta)
}

pub fn load_cube(path: &Path) -> Result<HsiCube> {
    let (meta, values) = read_pair(path, ArrayKind::Cube)?;
    let dims = dims3(&meta)?;
    let data = Array3::from_shape_vec(dims, values).expect("length checked");
    HsiCube::new(grid_from(&meta)?, data).map_err(|e| AdisError::Data(e.to_string()))
}

pub fn save_measurement(meas: &Measurement, path: &Path) -> Result<()> {
    let meta = sidecar(
        ArrayKind::Measurement,
        vec![meas.height(), meas.width()],
        None,
        "relative intensity",
    );
    write_pair(path, &encode(meas.data().iter().copied()), meta)
}

pub fn load_measurement(path: &Path) -> Result<Measurement> {
    let (meta, values) = read_pair(path, ArrayKind::Measurement)?;
    let dims = match meta.dims[..] {
        [h, w] => (h, w),
        _ => return Err(AdisError::Data(format!("measurement dims {:?}", meta.dims))),
    };
    Measurement::new(Array2::from_shape_vec(dims, values).expect("length checked"))
        .map_err(|e| AdisError::Data(e.to_string()))
}

pub fn save_psf_stack(stack: &PsfStack, path: &Path) -> Result<()> {
    let s = stack.side();
    let mut meta = sidecar(
        ArrayKind::Psf,
        vec![stack.bands(), s, s],
        Some(stack.grid()),
        "fraction of band energy",
    );
    meta.psf = Some(PsfMeta {
        pixel_pitch_m: stack.pixel_pitch(),
        order_truncation: stack.order_truncation(),
    });
    write_pair(path, &encode(stack.kernels().iter().copied()), meta)
}

/// Loads a stack written by [`save_psf_stack`]. Kernels are renormalised to
/// unit sum to absorb the single-precision rounding of the payload.
pub fn load_psf_stack(path: &Path) -> Result<PsfStack> {
    let (meta, values) = read_pair(path, ArrayKind::Psf)?;
    let dims = dims3(&meta)?;
    let pm = meta
        .psf
        .clone()
        .ok_or_else(|| AdisError::Data("PSF sidecar lacks pixel pitch".into()))?;
    let mut k = Array3::from_shape_vec(dims, values).expect("length checked");
    for mut band in k.axis_iter_mut(Axis(0)) {
        let s = band.sum();
        if s > 0.0 {
            band.mapv_inplace(|v| v / s);
        }
    }
    PsfStack::new(grid_from(&meta)?, k, pm.pixel_pitch_m, pm.order_truncation)
        .map_err(|e| AdisError::Data(e.to_string()))
}
