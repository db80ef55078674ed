//! 8-bit grayscale PNG previews. Each band is min-max scaled on its own;
//! the scaling is recorded in a JSON sidecar.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{sidecar_path, write_atomic, CREATOR};
use crate::error::{AdisError, Result};
use crate::spectral::{HsiCube, Measurement};

pub const COLORMAP: &str = "gray";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileInfo {
    pub band: Option<usize>,
    pub wavelength_nm: Option<f64>,
    /// Top-left corner of the tile in the image.
    pub x: usize,
    pub y: usize,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewInfo {
    pub colormap: String,
    pub normalization: String,
    pub tile_width: usize,
    pub tile_height: usize,
    pub tiles: Vec<TileInfo>,
    pub creator: String,
}

fn blit(img: &mut GrayImage, band: ArrayView2<f64>, ox: usize, oy: usize) -> (f64, f64) {
    let lo = band.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = band.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for ((i, j), &v) in band.indexed_iter() {
        let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
        let px = (t * 255.0).round().clamp(0.0, 255.0) as u8;
        img.put_pixel((ox + j) as u32, (oy + i) as u32, Luma([px]));
    }
    (lo, hi)
}

fn write_png(img: &GrayImage, info: &PreviewInfo, path: &Path) -> Result<()> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| AdisError::Io(std::io::Error::other(e)))?;
    write_atomic(path, buf.get_ref())?;
    write_atomic(&sidecar_path(path), serde_json::to_string_pretty(info)?.as_bytes())
}

/// Bands tiled row-major on a near-square grid with a one-pixel gap.
pub fn save_cube_preview(cube: &HsiCube, path: &Path) -> Result<PreviewInfo> {
    let (k, h, w) = (cube.bands(), cube.height(), cube.width());
    let cols = (k as f64).sqrt().ceil() as usize;
    let rows = k.div_ceil(cols);
    let mut img = GrayImage::new((cols * (w + 1) - 1) as u32, (rows * (h + 1) - 1) as u32);
    let mut tiles = Vec::with_capacity(k);
    for (b, band) in cube.data().outer_iter().enumerate() {
        let (x, y) = ((b % cols) * (w + 1), (b / cols) * (h + 1));
        let (min, max) = blit(&mut img, band, x, y);
        tiles.push(TileInfo {
            band: Some(b),
            wavelength_nm: Some(cube.grid().lambdas()[b] * 1e9),
            x,
            y,
            min,
            max,
        });
    }
    let info = PreviewInfo {
        colormap: COLORMAP.into(),
        normalization: "per-band min-max".into(),
        tile_width: w,
        tile_height: h,
        tiles,
        creator: CREATOR.into(),
    };
    write_png(&img, &info, path)?;
    Ok(info)
}

pub fn save_measurement_preview(meas: &Measurement, path: &Path) -> Result<PreviewInfo> {
    let (h, w) = (meas.height(), meas.width());
    let mut img = GrayImage::new(w as u32, h as u32);
    let (min, max) = blit(&mut img, meas.data().view(), 0, 0);
    let info = PreviewInfo {
        colormap: COLORMAP.into(),
        normalization: "min-max".into(),
        tile_width: w,
        tile_height: h,
        tiles: vec![TileInfo {
            band: None,
            wavelength_nm: None,
            x: 0,
            y: 0,
            min,
            max,
        }],
        creator: CREATOR.into(),
    };
    write_png(&img, &info, path)?;
    Ok(info)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::WavelengthGrid;
    use ndarray::Array3;

    #[test]
    fn tiles_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let grid = WavelengthGrid::uniform(450e-9, 650e-9, 5).unwrap();
        let d = Array3::from_shape_fn((5, 3, 4), |(k, i, j)| (k + 1) as f64 * (i * 4 + j) as f64);
        let info = save_cube_preview(&HsiCube::new(grid, d).unwrap(), &p).unwrap();
        let img = image::open(&p).unwrap().to_luma8();
        assert_eq!(img.dimensions(), (3 * 5 - 1, 2 * 4 - 1));
        assert_eq!(info.tiles[4].x, 5);
        assert_eq!(info.tiles[4].y, 4);
        assert_eq!(img.get_pixel(5 + 3, 4 + 2).0[0], 255);
        assert_eq!(img.get_pixel(5, 4).0[0], 0);
        assert_eq!(info.tiles[2].max, 33.0);
        assert!(sidecar_path(&p).exists());
    }
}
