use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, AdisError, Result};
use crate::spectral::WavelengthGrid;

/// Periodic super-pixel filter layout.
///
/// `assignment[y][x]` names the channel covering cell `(x, y)` of the
/// `period × period` super-pixel; `responses[c][k]` is channel `c`'s
/// transmittance in band `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MosaicFile", into = "MosaicFile")]
pub struct MosaicPattern {
    period: usize,
    assignment: Vec<usize>,
    responses: Array2<f64>,
}

/// On-disk JSON layout of a mosaic.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MosaicFile {
    pub period: usize,
    pub channels: usize,
    pub assignment: Vec<Vec<usize>>,
    pub responses: Vec<Vec<f64>>,
}

impl TryFrom<MosaicFile> for MosaicPattern {
    type Error = AdisError;
    fn try_from(f: MosaicFile) -> Result<Self> {
        if f.assignment.len() != f.period || f.assignment.iter().any(|r| r.len() != f.period) {
            return param_err(format!("assignment must be {0}x{0}", f.period));
        }
        if f.responses.len() != f.channels {
            return param_err(format!(
                "{} response rows for {} channels",
                f.responses.len(),
                f.channels
            ));
        }
        let k = f.responses.first().map_or(0, |r| r.len());
        if f.responses.iter().any(|r| r.len() != k) {
            return param_err("response rows must have equal length");
        }
        let flat: Vec<f64> = f.responses.into_iter().flatten().collect();
        let responses =
            Array2::from_shape_vec((f.channels, k), flat).map_err(|e| AdisError::Parameter(e.to_string()))?;
        Self::new(f.period, f.assignment.into_iter().flatten().collect(), responses)
    }
}

impl From<MosaicPattern> for MosaicFile {
    fn from(m: MosaicPattern) -> Self {
        let p = m.period;
        Self {
            period: p,
            channels: m.channels(),
            assignment: m.assignment.chunks(p).map(|r| r.to_vec()).collect(),
            responses: m.responses.outer_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

impl MosaicPattern {
    /// `assignment` is row-major, `period²` long.
    pub fn new(period: usize, assignment: Vec<usize>, responses: Array2<f64>) -> Result<Self> {
        if period == 0 {
            return param_err("mosaic period must be >= 1");
        }
        if assignment.len() != period * period {
            return param_err(format!("assignment needs {} cells", period * period));
        }
        let (channels, bands) = responses.dim();
        if channels == 0 || bands == 0 {
            return param_err("mosaic needs at least one channel and one band");
        }
        if let Some(c) = assignment.iter().find(|&&c| c >= channels) {
            return param_err(format!("cell assigned to channel {c} of {channels}"));
        }
        if responses.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return param_err("filter responses must lie in [0, 1]");
        }
        for (c, row) in responses.outer_iter().enumerate() {
            if row.iter().all(|v| *v == 0.0) {
                return param_err(format!("channel {c} has an all-zero response"));
            }
        }
        Ok(Self {
            period,
            assignment,
            responses,
        })
    }

    /// Single panchromatic channel passing every band.
    pub fn all_pass(bands: usize) -> Self {
        Self::new(1, vec![0], Array2::ones((1, bands))).expect("valid")
    }

    /// RGGB Bayer layout with Gaussian R/G/B responses.
    pub fn bayer(grid: &WavelengthGrid) -> Self {
        let centers = [610e-9, 540e-9, 465e-9];
        let r = gaussian_responses(grid, &centers, 80e-9);
        Self::new(2, vec![0, 1, 1, 2], r).expect("valid")
    }

    /// 3×3 super-pixel, 4 channels.
    pub fn mosaic_3x3(grid: &WavelengthGrid) -> Self {
        let centers = spread_centers(grid, 4);
        let r = gaussian_responses(grid, &centers, 70e-9);
        Self::new(3, vec![0, 1, 2, 3, 0, 1, 2, 3, 0], r).expect("valid")
    }

    /// 4×4 super-pixel, 9 channels.
    pub fn mosaic_4x4(grid: &WavelengthGrid) -> Self {
        let centers = spread_centers(grid, 9);
        let r = gaussian_responses(grid, &centers, 50e-9);
        let a = vec![0, 1, 2, 3, 4, 5, 6, 7, 8, 0, 1, 2, 3, 4, 5, 6];
        Self::new(4, a, r).expect("valid")
    }

    /// Looks up a named preset: `all-pass`, `bayer`, `3x3`, `4x4`.
    pub fn preset(name: &str, grid: &WavelengthGrid) -> Result<Self> {
        match name {
            "all-pass" | "panchromatic" => Ok(Self::all_pass(grid.count())),
            "bayer" | "2x2" => Ok(Self::bayer(grid)),
            "3x3" => Ok(Self::mosaic_3x3(grid)),
            "4x4" => Ok(Self::mosaic_4x4(grid)),
            other => param_err(format!("unknown mosaic preset '{other}' (all-pass, bayer, 3x3, 4x4)")),
        }
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn channels(&self) -> usize {
        self.responses.nrows()
    }

    pub fn bands(&self) -> usize {
        self.responses.ncols()
    }

    pub fn responses(&self) -> &Array2<f64> {
        &self.responses
    }

    pub fn channel_at(&self, x: usize, y: usize) -> usize {
        self.assignment[(y % self.period) * self.period + x % self.period]
    }

    /// `Q[x, y, band]`.
    pub fn response(&self, x: usize, y: usize, band: usize) -> Result<f64> {
        if band >= self.bands() {
            return Err(AdisError::Index(format!("band {band} of {}", self.bands())));
        }
        Ok(self.responses[[self.channel_at(x, y), band]])
    }

    /// Dense `(band, row, col)` response map with the sensor origin at
    /// `(origin_x, origin_y)` of the mosaic lattice.
    pub fn response_map(&self, height: usize, width: usize, origin_x: isize, origin_y: isize) -> Array3<f64> {
        let p = self.period as isize;
        Array3::from_shape_fn((self.bands(), height, width), |(k, y, x)| {
            let cx = (x as isize + origin_x).rem_euclid(p) as usize;
            let cy = (y as isize + origin_y).rem_euclid(p) as usize;
            self.responses[[self.assignment[cy * self.period + cx], k]]
        })
    }
}

/// Channel responses `exp(−(λ−c)²/(2σ²))` with `σ = fwhm / 2.3548`.
pub fn gaussian_responses(grid: &WavelengthGrid, centers: &[f64], fwhm: f64) -> Array2<f64> {
    let sigma = fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    Array2::from_shape_fn((centers.len(), grid.count()), |(c, k)| {
        let d = grid.lambdas()[k] - centers[c];
        // Keep every channel strictly positive so no row is all-zero.
        (-d * d / (2.0 * sigma * sigma)).exp().max(1e-6)
    })
}

fn spread_centers(grid: &WavelengthGrid, n: usize) -> Vec<f64> {
    let span = grid.max() - grid.min();
    (0..n)
        .map(|i| grid.min() + span * (i as f64 + 0.5) / n as f64)
        .collect()
}
